"""Histogram divergences used as training losses, with analytic gradients.

Every function accepts :class:`~scoredist.histogram.ScoreHistogram` objects or
plain arrays. Arrays may be batched: the last axis holds the Z bins and the
result has the leading shape. Entropic quantities are in bits.
"""

from __future__ import annotations

import enum

import numpy as np

from .histogram import ScaleMismatchError, ScoreHistogram

EPS = 1e-12
BOUNDARY = 1e-9
LN2 = np.log(2.0)


class DivergenceKind(str, enum.Enum):
    PED = "ped"
    PCE = "pce"
    PJS = "pjs"
    PCS = "pcs"
    PKL = "pkl"
    HUBER = "huber"
    CED = "ced"
    CJS = "cjs"

    @property
    def label(self) -> str:
        return self.name if self is not DivergenceKind.HUBER else "Huber"

    @property
    def logarithmic(self) -> bool:
        return self in _LOG_KINDS

    @classmethod
    def parse(cls, name: "str | DivergenceKind") -> "DivergenceKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(
                f"unknown divergence {name!r}; choose from {', '.join(k.value for k in cls)}"
            ) from None


_LOG_KINDS = frozenset({DivergenceKind.PCE, DivergenceKind.PJS, DivergenceKind.PKL, DivergenceKind.CJS})

# evaluation columns, in reporting order
MD_COLUMNS = (
    DivergenceKind.PED,
    DivergenceKind.PCE,
    DivergenceKind.PJS,
    DivergenceKind.PCS,
    DivergenceKind.PKL,
    DivergenceKind.CED,
    DivergenceKind.CJS,
)


class BoundaryGradientError(ValueError):
    """A logarithmic divergence has no finite gradient at the simplex boundary."""


def _pair(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(y, ScoreHistogram) and isinstance(y_hat, ScoreHistogram) and y.scale != y_hat.scale:
        raise ScaleMismatchError("histograms are on different rating scales")
    a = np.asarray(y, dtype=np.float64)
    b = np.asarray(y_hat, dtype=np.float64)
    if a.shape[-1:] != b.shape[-1:]:
        raise ScaleMismatchError(f"bin counts differ: {a.shape[-1:]} vs {b.shape[-1:]}")
    return a, b


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def _plogq(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Elementwise p * log2(p / q) with 0 log 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = p * np.log2(p / q)
    return np.where(p > 0.0, t, 0.0)


def _reverse_cumsum(g: np.ndarray) -> np.ndarray:
    # adjoint of the running sum: dL/dy_i = sum_{k >= i} dL/dY_k
    return np.flip(np.cumsum(np.flip(g, -1), -1), -1)


def ped(y, y_hat):
    a, b = _pair(y, y_hat)
    return _out(np.sum((a - b) ** 2, axis=-1))


def pce(y, y_hat):
    a, b = _pair(y, y_hat)
    q = np.clip(b, EPS, 1.0 - EPS)
    return _out(-np.sum(a * np.log2(q) + (1.0 - a) * np.log2(1.0 - q), axis=-1))


def _js_terms(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = 0.5 * a + 0.5 * b
    return 0.5 * (_plogq(a, m) + _plogq(b, m))


def pjs(y, y_hat):
    a, b = _pair(y, y_hat)
    return _out(np.maximum(np.sum(_js_terms(a, b), axis=-1), 0.0))


def pcs(y, y_hat):
    a, b = _pair(y, y_hat)
    s = a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(s > 0.0, (a - b) ** 2 / s, 0.0)
    return _out(0.5 * np.sum(t, axis=-1))


def _kl_prep(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = np.clip(x, EPS, 1.0)
    total = np.sum(c, axis=-1, keepdims=True)
    return c / total, total


def pkl(y, y_hat):
    a, b = _pair(y, y_hat)
    p, _ = _kl_prep(a)
    q, _ = _kl_prep(b)
    return _out(np.maximum(0.5 * np.sum((p - q) * np.log2(p / q), axis=-1), 0.0))


def huber(y, y_hat, delta: float = 1.0):
    if not delta > 0:
        raise ValueError("huber delta must be positive")
    a, b = _pair(y, y_hat)
    r = np.abs(a - b)
    rho = np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))
    return _out(np.sum(rho, axis=-1))


def ced(y, y_hat):
    a, b = _pair(y, y_hat)
    return _out(np.sum((np.cumsum(a, -1) - np.cumsum(b, -1)) ** 2, axis=-1))


def cjs(y, y_hat):
    """Symmetric Jensen-Shannon divergence between the two running-sum CDFs."""
    a, b = _pair(y, y_hat)
    return _out(np.maximum(np.sum(_js_terms(np.cumsum(a, -1), np.cumsum(b, -1)), axis=-1), 0.0))


_LOSSES = {
    DivergenceKind.PED: ped,
    DivergenceKind.PCE: pce,
    DivergenceKind.PJS: pjs,
    DivergenceKind.PCS: pcs,
    DivergenceKind.PKL: pkl,
    DivergenceKind.HUBER: huber,
    DivergenceKind.CED: ced,
    DivergenceKind.CJS: cjs,
}


def divergence(kind, y, y_hat):
    return _LOSSES[DivergenceKind.parse(kind)](y, y_hat)


def interior_mask(kind, y_hat) -> np.ndarray | bool:
    """True where ``y_hat`` is far enough from the boundary for a finite gradient."""
    kind = DivergenceKind.parse(kind)
    b = np.asarray(y_hat, dtype=np.float64)
    if not kind.logarithmic:
        return np.ones(b.shape[:-1], dtype=bool) if b.ndim > 1 else True
    ok = np.all(b >= BOUNDARY, axis=-1)
    if kind is DivergenceKind.PCE:
        ok &= np.all(b <= 1.0 - BOUNDARY, axis=-1)
    return ok


def gradient(kind, y, y_hat, *, delta: float = 1.0) -> np.ndarray:
    """Analytic d loss / d y_hat, treating ``y_hat`` as an unconstrained vector.

    Raises :class:`BoundaryGradientError` if any row of ``y_hat`` touches the
    boundary for a logarithmic kind.
    """
    kind = DivergenceKind.parse(kind)
    a, b = _pair(y, y_hat)
    if not np.all(interior_mask(kind, b)):
        raise BoundaryGradientError("gradient undefined at boundary")

    if kind is DivergenceKind.PED:
        return 2.0 * (b - a)
    if kind is DivergenceKind.PCE:
        return -(a / b - (1.0 - a) / (1.0 - b)) / LN2
    if kind is DivergenceKind.PJS:
        return 0.5 * np.log2(b / (0.5 * a + 0.5 * b))
    if kind is DivergenceKind.PCS:
        s = a + b
        d = b - a
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(s > 0.0, 0.5 * (2.0 * d / s - (d / s) ** 2), 0.5)
        return g
    if kind is DivergenceKind.PKL:
        p, _ = _kl_prep(a)
        q, total = _kl_prep(b)
        g = 0.5 * (np.log(q / p) + 1.0 - p / q) / LN2
        # chain through the internal renormalization q = y_hat / sum(y_hat)
        return (g - np.sum(g * q, axis=-1, keepdims=True)) / total
    if kind is DivergenceKind.HUBER:
        if not delta > 0:
            raise ValueError("huber delta must be positive")
        r = a - b
        return np.where(np.abs(r) <= delta, -r, -delta * np.sign(r))
    if kind is DivergenceKind.CED:
        return _reverse_cumsum(2.0 * (np.cumsum(b, -1) - np.cumsum(a, -1)))
    if kind is DivergenceKind.CJS:
        ya, yb = np.cumsum(a, -1), np.cumsum(b, -1)
        return _reverse_cumsum(0.5 * np.log2(yb / (0.5 * ya + 0.5 * yb)))
    raise AssertionError(kind)
