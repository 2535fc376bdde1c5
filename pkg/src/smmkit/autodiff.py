"""A small reverse-mode differentiation tape over numpy arrays.

Nodes hold array values; each operation records a closure mapping the
upstream gradient to contributions for its inputs. Broadcasting in the
forward pass is undone by summing in the backward pass. Only the operations
needed by the mixture objectives are provided.

>>> x = Var(np.array([1.0, 2.0]))
>>> y = (x * x).sum()
>>> backward(y)
>>> x.grad
array([2., 4.])
"""

import numpy as np

from .special import LOG_2PI, gaussian_cdf

__all__ = ["Var", "const", "backward", "exp", "log", "square", "gauss_logpdf", "normal_cdf",
           "logsumexp", "external", "concat"]


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Var:
    """Array-valued node. ``grad`` is populated by :func:`backward`."""

    __slots__ = ("value", "parents", "grad", "requires_grad")
    __array_ufunc__ = None

    def __init__(self, value, parents=(), requires_grad=True):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in parents)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.shape})"

    def __add__(self, other):
        other = const(other)
        return Var(self.value + other.value, (
            (self, lambda g: _unbroadcast(g, self.shape)),
            (other, lambda g: _unbroadcast(g, other.shape)),
        ))

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, ((self, lambda g: -g),))

    def __sub__(self, other):
        return self + (-const(other))

    def __rsub__(self, other):
        return const(other) + (-self)

    def __mul__(self, other):
        other = const(other)
        a, b = self.value, other.value
        return Var(a * b, (
            (self, lambda g: _unbroadcast(g * b, self.shape)),
            (other, lambda g: _unbroadcast(g * a, other.shape)),
        ))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = const(other)
        a, b = self.value, other.value
        return Var(a / b, (
            (self, lambda g: _unbroadcast(g / b, self.shape)),
            (other, lambda g: _unbroadcast(-g * a / (b * b), other.shape)),
        ))

    def __rtruediv__(self, other):
        return const(other) / self

    def __getitem__(self, idx):
        shape = self.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return out

        return Var(self.value[idx], ((self, back),))

    def __matmul__(self, other):
        other = const(other)
        a, b = self.value, other.value
        return Var(a @ b, (
            (self, lambda g: np.outer(g, b) if b.ndim == 1 else g @ b.T),
            (other, lambda g: a.T @ g),
        ))

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape)

        return Var(self.value.sum(axis=axis, keepdims=keepdims), ((self, back),))

    def reshape(self, *shape):
        old = self.shape
        return Var(self.value.reshape(*shape), ((self, lambda g: g.reshape(old)),))


def const(x):
    """Wrap a non-differentiable value (pass Vars through)."""
    return x if isinstance(x, Var) else Var(x, requires_grad=False)


def exp(x):
    out = np.exp(x.value)
    return Var(out, ((x, lambda g: g * out),))


def log(x):
    v = x.value
    return Var(np.log(v), ((x, lambda g: g / v),))


def square(x):
    v = x.value
    return Var(v * v, ((x, lambda g: 2.0 * g * v),))


def gauss_logpdf(x, mean, std):
    """Elementwise ``log N(x; mean, std**2)`` with broadcasting."""
    x, mean, std = const(x), const(mean), const(std)
    s = std.value
    r = (x.value - mean.value) / s
    out = -0.5 * r * r - np.log(s) - 0.5 * LOG_2PI
    return Var(out, (
        (x, lambda g: _unbroadcast(-g * r / s, x.shape)),
        (mean, lambda g: _unbroadcast(g * r / s, mean.shape)),
        (std, lambda g: _unbroadcast(g * (r * r - 1.0) / s, std.shape)),
    ))


def normal_cdf(x):
    v = x.value
    dens = np.exp(-0.5 * v * v - 0.5 * LOG_2PI)
    return Var(gaussian_cdf(v), ((x, lambda g: g * dens),))


def logsumexp(x, axis=-1):
    """Log-sum-exp with a constant max shift (the shift cancels in the gradient)."""
    shift = np.max(x.value, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    return log(exp(x - shift).sum(axis=axis)) + np.squeeze(shift, axis=axis)


def external(value, x, vjp_value):
    """Node whose input-gradient is supplied by the caller.

    ``vjp_value`` has the shape of ``x``; the recorded gradient is
    ``g[..., None] * vjp_value`` when the output is a per-row scalar.
    """
    value = np.asarray(value, dtype=float)
    jac = np.asarray(vjp_value, dtype=float)

    def back(g):
        return jac * g.reshape(g.shape + (1,) * (jac.ndim - g.ndim))

    return Var(value, ((x, back),))


def concat(parts, axis=0):
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def make(i):
        return lambda g: np.split(g, cuts, axis=axis)[i]

    return Var(np.concatenate([p.value for p in parts], axis=axis),
               tuple((p, make(i)) for i, p in enumerate(parts)))


def backward(out):
    """Accumulate d(out)/d(node) into ``node.grad`` for every node reachable from ``out``.

    ``out`` must be a scalar node.
    """
    if out.value.size != 1:
        raise ValueError("backward needs a scalar output")
    order, seen = [], set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    for node in order:
        node.grad = None
    out.grad = np.ones_like(out.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, fn in node.parents:
            if not parent.requires_grad:
                continue
            contrib = fn(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib
