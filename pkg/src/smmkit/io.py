"""Model files, config files and CSV output.

Model files are JSON documents::

    {"dim": 2, "weights_re": [1.0, -0.46], "weights_im": [0.0, 0.0],
     "means": [[0, 0], [0, 0]], "stddevs": [[3, 3], [2, 2]]}

``weights_im`` is optional. Additive (all-positive, unsquared) mixtures use
``"kind": "additive"`` with a ``coeffs`` field instead of the weight fields.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .exceptions import InputError, InvalidModelError
from .mixture import AdditiveMixture, ComplexSmm

__all__ = ["SCHEMA_VERSION", "model_to_dict", "model_from_dict", "save_model", "load_model",
           "load_config", "write_json", "write_csv", "format_number", "write_points", "read_points"]

SCHEMA_VERSION = 1


def model_to_dict(model):
    d = model.to_dict()
    d.setdefault("schema_version", SCHEMA_VERSION)
    return d


def _field(doc, name, required=True):
    if name not in doc:
        if required:
            raise InputError(f"model file lacks required field {name!r}")
        return None
    return doc[name]


def model_from_dict(doc):
    if not isinstance(doc, dict):
        raise InputError("model document must be a mapping")
    kind = doc.get("kind", "squared")
    means = np.asarray(_field(doc, "means"), dtype=float)
    stds = np.asarray(_field(doc, "stddevs"), dtype=float)
    dim = _field(doc, "dim")
    if means.ndim != 2 or means.shape[1] != dim:
        raise InputError(f"means have shape {means.shape}, expected (K, {dim})")
    try:
        if kind == "additive":
            return AdditiveMixture(_field(doc, "coeffs"), means, stds)
        if kind != "squared":
            raise InputError(f"unknown model kind {kind!r}")
        re = np.asarray(_field(doc, "weights_re"), dtype=float)
        im = _field(doc, "weights_im", required=False)
        return ComplexSmm.from_parts(re, im, means, stds)
    except InvalidModelError as err:
        raise InputError(f"invalid model: {err}") from None


def save_model(model, path):
    write_json(path, model_to_dict(model))


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise InputError(f"{path}: not valid JSON ({err})") from None
    return model_from_dict(doc)


def load_config(path):
    """Read a JSON config file into a dict."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise InputError(f"{path}: not valid JSON ({err})") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def format_number(v):
    """Floats at 17 significant digits; everything else via ``str``."""
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, rows, columns=None):
    """Write dict rows; ``columns`` fixes the order (default: keys of the first row)."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_number(row.get(c)) for c in columns])


def write_points(path, X, meta=None):
    """Write sample rows ``x0..x{D-1}`` plus optional meta columns."""
    X = np.asarray(X)
    cols = [f"x{i}" for i in range(X.shape[1])]
    meta = meta or {}
    rows = []
    for i, x in enumerate(X):
        row = dict(zip(cols, map(float, x)))
        row.update({k: v[i].item() if hasattr(v[i], "item") else v[i] for k, v in meta.items()})
        rows.append(row)
    write_csv(path, rows, cols + list(meta))


def read_points(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
        return np.array([[float(r[i]) for i in cols] for r in reader]).reshape(-1, len(cols))
