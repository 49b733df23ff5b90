"""Max-affine models, their DC and Bregman compositions, and JSON persistence.

A :class:`MaxAffineModel` stores one plane per training point in normalized
coordinates, ``f(x) = max_i <a_i, x - x_i> + b_i``.  Inputs to the public
evaluation functions are in raw units; the stored normalization is applied
first.  Regression outputs are mapped back to raw units, Bregman divergences
are left in normalized units.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .numerics import NormalizationState

SCHEMA_VERSION = 1
KINDS = ("convex", "dc", "bregman")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class MaxAffineModel:
    anchors: np.ndarray
    slopes: np.ndarray
    offsets: np.ndarray
    norm: NormalizationState

    def __post_init__(self):
        anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        slopes = np.atleast_2d(np.asarray(self.slopes, dtype=float))
        offsets = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        n = anchors.shape[0]
        if n < 1 or slopes.shape != anchors.shape or offsets.shape != (n,):
            raise ModelError(
                f"inconsistent model arrays: anchors {anchors.shape}, "
                f"slopes {slopes.shape}, offsets {offsets.shape}"
            )
        if self.norm.d != anchors.shape[1]:
            raise ModelError("normalization dimension does not match anchors")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "offsets", offsets)

    @property
    def n(self) -> int:
        return self.anchors.shape[0]

    @property
    def d(self) -> int:
        return self.anchors.shape[1]

    @property
    def intercepts(self) -> np.ndarray:
        """``b_i - <a_i, x_i>`` so that plane i is ``<a_i, x> + intercept_i``."""
        return self.offsets - np.einsum("ia,ia->i", self.slopes, self.anchors)

    def planes_normalized(self, Xn) -> np.ndarray:
        """Plane values, shape (m, n), at normalized points ``Xn`` (m, d)."""
        return Xn @ self.slopes.T + self.intercepts[None, :]

    def eval_normalized(self, Xn):
        """Max over planes and lowest-index argmax at normalized points."""
        P = self.planes_normalized(np.atleast_2d(Xn))
        idx = np.argmax(P, axis=1)
        return P[np.arange(P.shape[0]), idx], idx

    def _check_x(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        X2 = X.reshape(1, -1) if X.ndim <= 1 else X
        if X2.shape[1] != self.d:
            raise ModelError(f"dimension mismatch: model has d={self.d}, input has {X2.shape[1]}")
        return X2

    def predict(self, X) -> np.ndarray:
        """Vectorized raw-unit evaluation for an (m, d) array."""
        Xn = self.norm.transform_x(self._check_x(X))
        vals, _ = self.eval_normalized(Xn)
        return self.norm.inverse_y(vals)


@dataclass(frozen=True)
class DcModel:
    phi1: MaxAffineModel
    phi2: MaxAffineModel

    def __post_init__(self):
        if not np.array_equal(self.phi1.anchors, self.phi2.anchors) or self.phi1.norm != self.phi2.norm:
            raise ModelError("DC components must share anchors and normalization")

    @property
    def norm(self) -> NormalizationState:
        return self.phi1.norm

    @property
    def d(self) -> int:
        return self.phi1.d

    def predict(self, X) -> np.ndarray:
        Xn = self.norm.transform_x(self.phi1._check_x(X))
        v1, _ = self.phi1.eval_normalized(Xn)
        v2, _ = self.phi2.eval_normalized(Xn)
        return self.norm.inverse_y(v1 - v2)


@dataclass(frozen=True)
class BregmanModel:
    generator: MaxAffineModel
    train_labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.train_labels, dtype=np.int64)
        if labels.shape != (self.generator.n,):
            raise ModelError("one label per anchor required")
        object.__setattr__(self, "train_labels", labels)

    @property
    def n(self) -> int:
        return self.generator.n

    @property
    def d(self) -> int:
        return self.generator.d

    def divergences(self, X) -> np.ndarray:
        """Matrix ``D(x_m, anchor_j)`` of shape (m, n) for raw points ``X``."""
        g = self.generator
        Xn = g.norm.transform_x(g._check_x(X))
        fx, _ = g.eval_normalized(Xn)
        # plane j evaluated at x: <a_j, x - x_j> + b_j
        return fx[:, None] - g.planes_normalized(Xn)


def evaluate(model: MaxAffineModel, x):
    """Evaluate at one raw point; returns ``(value, active_index)``."""
    Xn = model.norm.transform_x(model._check_x(x))
    vals, idx = model.eval_normalized(Xn)
    return float(model.norm.inverse_y(vals[0])), int(idx[0])


def dc_evaluate(model: DcModel, x) -> float:
    return float(model.predict(x)[0])


def bregman_divergence(model: BregmanModel, x, j: int) -> float:
    """``f(x) - b_j - <a_j, x - x_j>`` in normalized coordinates."""
    if not 0 <= j < model.n:
        raise ModelError(f"anchor index {j} out of range for n={model.n}")
    g = model.generator
    xn = g.norm.transform_x(g._check_x(x))[0]
    fx = float(np.max(g.planes_normalized(xn[None, :])))
    return fx - g.offsets[j] - float(g.slopes[j] @ (xn - g.anchors[j]))


def knn_vote(div_row, labels, k: int = 5) -> int:
    """Majority label among the ``k`` smallest divergences.

    Ranking ties go to the lower anchor index; vote ties go to the label with
    the smaller total divergence, then to the smaller label.
    """
    if k < 1:
        raise ModelError("k must be at least 1")
    k = min(k, len(labels))
    order = np.argsort(div_row, kind="stable")[:k]
    best = None
    for lab in np.unique(labels[order]):
        sel = order[labels[order] == lab]
        key = (-len(sel), float(np.sum(div_row[sel])), int(lab))
        if best is None or key < best[0]:
            best = (key, int(lab))
    return best[1]


def predict_knn(model: BregmanModel, x, k: int = 5) -> int:
    return knn_vote(model.divergences(x)[0], model.train_labels, k)


def predict_knn_batch(model: BregmanModel, X, k: int = 5) -> np.ndarray:
    div = model.divergences(X)
    return np.array([knn_vote(row, model.train_labels, k) for row in div], dtype=np.int64)


# -- persistence -------------------------------------------------------------

def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def model_to_dict(model) -> dict:
    if isinstance(model, DcModel):
        kind, base = "dc", model.phi1
    elif isinstance(model, BregmanModel):
        kind, base = "bregman", model.generator
    elif isinstance(model, MaxAffineModel):
        kind, base = "convex", model
    else:
        raise ModelError(f"cannot serialize {type(model).__name__}")
    doc = {
        "schema": SCHEMA_VERSION,
        "kind": kind,
        "n": base.n,
        "d": base.d,
        "norm": base.norm.to_dict(),
        "anchors": _arr(base.anchors),
        "slopes": _arr(base.slopes),
        "offsets": _arr(base.offsets),
    }
    if kind == "dc":
        doc["slopes2"] = _arr(model.phi2.slopes)
        doc["offsets2"] = _arr(model.phi2.offsets)
    if kind == "bregman":
        doc["labels"] = [int(v) for v in model.train_labels]
    for key, val in doc.items():
        if key not in ("kind", "schema") and not _all_finite(val):
            raise ModelError(f"non-finite values in field {key!r}")
    return doc


def save(model, path) -> None:
    doc = model_to_dict(model)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")


def _all_finite(val) -> bool:
    if isinstance(val, dict):
        return all(_all_finite(v) for v in val.values())
    if isinstance(val, list):
        return all(_all_finite(v) for v in val)
    if isinstance(val, float):
        return math.isfinite(val)
    return True


def _field(doc, name):
    if name not in doc:
        raise ModelError(f"model file is missing field {name!r}")
    return doc[name]


def _matrix(doc, name, n, d):
    try:
        arr = np.asarray(_field(doc, name), dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"field {name!r} is not numeric") from exc
    expected = (n, d) if d else (n,)
    if arr.shape != expected:
        raise ModelError(f"field {name!r} has shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"field {name!r} contains non-finite values")
    return arr


def model_from_dict(doc: dict, kind: str | None = None):
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    schema = _field(doc, "schema")
    if schema != SCHEMA_VERSION:
        raise ModelError(f"unsupported schema version {schema!r} (expected {SCHEMA_VERSION})")
    doc_kind = _field(doc, "kind")
    if doc_kind not in KINDS:
        raise ModelError(f"unknown model kind {doc_kind!r}")
    if kind is not None and doc_kind != kind:
        raise ModelError(f"kind mismatch: file holds {doc_kind!r}, expected {kind!r}")
    n, d = int(_field(doc, "n")), int(_field(doc, "d"))
    nd = _field(doc, "norm")
    if not isinstance(nd, dict):
        raise ModelError("field 'norm' must be an object")
    norm = NormalizationState(
        _matrix(nd, "x_center", d, 0),
        _matrix(nd, "x_scale", d, 0),
        float(_field(nd, "y_center")),
        float(_field(nd, "y_scale")),
    )
    if not (math.isfinite(norm.y_center) and math.isfinite(norm.y_scale)):
        raise ModelError("normalization contains non-finite values")
    if np.any(norm.x_scale <= 0) or norm.y_scale <= 0:
        raise ModelError("normalization scales must be positive")
    anchors = _matrix(doc, "anchors", n, d)
    base = MaxAffineModel(anchors, _matrix(doc, "slopes", n, d), _matrix(doc, "offsets", n, 0), norm)
    if doc_kind == "convex":
        return base
    if doc_kind == "dc":
        phi2 = MaxAffineModel(anchors, _matrix(doc, "slopes2", n, d), _matrix(doc, "offsets2", n, 0), norm)
        return DcModel(base, phi2)
    labels = _field(doc, "labels")
    if not isinstance(labels, list) or len(labels) != n or not all(
        isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in labels
    ):
        raise ModelError("field 'labels' must hold n non-negative integers")
    return BregmanModel(base, np.asarray(labels, dtype=np.int64))


def load(path, kind: str | None = None):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed model file {path}: {exc}") from exc
    return model_from_dict(doc, kind)
