"""Exception hierarchy shared by all smmkit modules."""


class SmmError(Exception):
    """Base class for every error raised by smmkit."""


class InvalidModelError(SmmError, ValueError):
    """A mixture cannot be normalized or has malformed parameters."""


class DimensionError(SmmError, ValueError):
    """Input shape does not match the model dimension."""


class InputError(SmmError, ValueError):
    """Non-finite or otherwise malformed evaluation input."""


class DegenerateConditioningError(SmmError, ArithmeticError):
    """Conditioning on a prefix with zero marginal evidence."""


class BoundsTooTightError(SmmError, ValueError):
    """Binary-search bounds do not bracket the conditional CDF."""

    def __init__(self, dim, lo_cdf, hi_cdf):
        self.dim = dim
        super().__init__(
            f"search bounds do not cover dimension {dim}: "
            f"CDF(L)={lo_cdf:.3g}, CDF(B)={hi_cdf:.3g}"
        )


class InsufficientAcceptanceError(SmmError, RuntimeError):
    """Rejection sampling ran out of proposal budget."""

    def __init__(self, n_accepted, n_requested, n_proposed):
        self.n_accepted = n_accepted
        self.n_requested = n_requested
        self.n_proposed = n_proposed
        self.rate = n_accepted / max(n_proposed, 1)
        super().__init__(
            f"only {n_accepted}/{n_requested} samples accepted after "
            f"{n_proposed} proposals (observed rate {self.rate:.4g})"
        )


class NoAcceptanceError(SmmError, RuntimeError):
    """Fixed-budget rejection produced zero accepted samples."""


class BudgetTooSmallError(SmmError, ValueError):
    """Sample budget too small for the requested split."""


class UnboundedWeightError(SmmError, ArithmeticError):
    """Importance weight is infinite: the proposal vanishes on the integrand's support."""


class GradientAtZeroError(SmmError, ArithmeticError):
    """log q is -inf at the requested point, so its gradient is undefined."""


class UnsupportedTargetError(SmmError, TypeError):
    """The target lacks a capability required by the operation."""


class TrainingAbortedError(SmmError, RuntimeError):
    """Too many consecutive rolled-back optimization steps."""
