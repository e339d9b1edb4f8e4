"""Generalized residuals and their inversion into outcome-space rectangles.

Models are consumed as prediction tables. Two residual kinds are supported:
absolute residuals ``|y - f(x)|`` for point predictions, and the signed
distance to a predicted ``[lo, hi]`` band for quantile models, made
nonnegative either by truncation at zero or by a constant shift ``c``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError, ShiftTooSmall

DEFAULT_JITTER_SCALE = 1e-6
SHIFT_MARGIN = 0.01


@dataclass(frozen=True)
class ResidualMatrix:
    """``(n, d)`` table of nonnegative, finite residuals.

    ``clamped`` counts entries that came out negative under a shift chosen
    on other data and were set to zero.
    """

    values: np.ndarray
    jittered: bool = False
    clamped: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ShapeError(f"residuals must be 2-d, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("residuals must be finite")
        if np.any(v < 0):
            raise ValueError("residuals must be nonnegative")
        if self.jittered:
            for j in range(v.shape[1]):
                if np.unique(v[:, j]).size != v.shape[0]:
                    raise ValueError(f"jittered column {j} still has ties")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def as_residuals(residuals) -> ResidualMatrix:
    if isinstance(residuals, ResidualMatrix):
        return residuals
    return ResidualMatrix(np.asarray(residuals, dtype=float))


@dataclass(frozen=True)
class ModelOutput:
    """Prediction tables of a pre-trained model.

    ``kind="point"`` carries ``point``; ``kind="quantile"`` carries ``lo`` and
    ``hi``. ``shift`` is the constant added to quantile residuals (0 means
    truncation or no shift).
    """

    kind: str
    point: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    shift: float = 0.0

    def __post_init__(self):
        if self.kind == "point":
            if self.point is None:
                raise ShapeError("point model needs a prediction table")
            object.__setattr__(self, "point", _as_table(self.point))
        elif self.kind == "quantile":
            if self.lo is None or self.hi is None:
                raise ShapeError("quantile model needs lo and hi tables")
            lo, hi = _as_table(self.lo), _as_table(self.hi)
            if lo.shape != hi.shape:
                raise ShapeError(f"lo {lo.shape} and hi {hi.shape} differ in shape")
            if np.any(lo > hi):
                raise ValueError("quantile model has lo > hi")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
        else:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not (self.shift >= 0):
            raise ValueError("shift must be nonnegative")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.point if self.kind == "point" else self.lo).shape

    def with_shift(self, shift: float) -> "ModelOutput":
        return replace(self, shift=float(shift))

    def row(self, i: int) -> "ModelOutput":
        if self.kind == "point":
            return replace(self, point=self.point[i : i + 1])
        return replace(self, lo=self.lo[i : i + 1], hi=self.hi[i : i + 1])


def _as_table(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-d table, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class OutcomeRectangle:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float)
        upper = np.array(self.upper, dtype=float)
        if lower.shape != upper.shape:
            raise ShapeError("lower and upper differ in shape")
        if np.any(lower > upper):
            raise ValueError("rectangle has lower > upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def contains(self, y) -> np.ndarray | bool:
        y = np.asarray(y, dtype=float)
        inside = np.all((y >= self.lower) & (y <= self.upper), axis=-1)
        return bool(inside) if np.ndim(inside) == 0 else inside


def absolute_residuals(outcomes, model: ModelOutput) -> ResidualMatrix:
    if model.kind != "point":
        raise ValueError("absolute residuals need a point model")
    y = _as_table(outcomes)
    if y.shape != model.point.shape:
        raise ShapeError(f"outcomes {y.shape} vs predictions {model.point.shape}")
    return ResidualMatrix(np.abs(y - model.point))


def raw_quantile_residuals(outcomes, model: ModelOutput) -> np.ndarray:
    """Signed distance ``max(lo - y, y - hi)``; negative inside the band."""
    if model.kind != "quantile":
        raise ValueError("quantile residuals need a quantile model")
    y = _as_table(outcomes)
    if y.shape != model.lo.shape:
        raise ShapeError(f"outcomes {y.shape} vs predictions {model.lo.shape}")
    return np.maximum(model.lo - y, y - model.hi)


def default_shift(raw: np.ndarray) -> float:
    """Smallest shift making ``raw`` nonnegative, plus a 1% margin."""
    need = max(0.0, float(-np.min(raw)))
    return need * (1.0 + SHIFT_MARGIN)


def cqr_residuals(outcomes, model: ModelOutput, mode: str = "truncate",
                  shift: float | None = None, clamp: bool = False) -> ResidualMatrix:
    """Quantile-band residuals made nonnegative.

    mode="truncate" returns ``max(raw, 0)``. mode="shift" returns
    ``raw + c`` with ``c = shift`` (or ``model.shift`` when that is positive,
    or the data-driven default). A shifted entry that is still negative is
    an error unless ``clamp=True``, in which case it is set to zero and
    counted; that is the intended path for test-time residuals whose shift
    was fixed on calibration data.
    """
    raw = raw_quantile_residuals(outcomes, model)
    if mode == "truncate":
        return ResidualMatrix(np.maximum(raw, 0.0))
    if mode != "shift":
        raise ValueError(f"unknown mode {mode!r}")
    if shift is None:
        shift = model.shift if model.shift > 0 else default_shift(raw)
    shifted = raw + float(shift)
    negative = int(np.count_nonzero(shifted < 0))
    if negative and not clamp:
        raise ShiftTooSmall(
            f"shift {shift} leaves {negative} negative residuals (need >= {-raw.min()})")
    if negative:
        warnings.warn(f"{negative} shifted residuals clamped to zero", RuntimeWarning,
                      stacklevel=2)
    return ResidualMatrix(np.maximum(shifted, 0.0), clamped=negative)


def smallest_gap(column: np.ndarray) -> float:
    """Smallest strictly positive difference between sorted entries (0 if none)."""
    gaps = np.diff(np.sort(column))
    gaps = gaps[gaps > 0]
    return float(gaps.min()) if gaps.size else 0.0


def jitter(matrix, scale: float = DEFAULT_JITTER_SCALE, seed: int = 0) -> ResidualMatrix:
    """Break ties by adding ``Uniform[0, scale * gap_j]`` noise per entry.

    ``gap_j`` is column j's smallest nonzero gap (``1`` for a constant
    column, so the noise is ``Uniform[0, scale]``). With ``scale < 1``,
    entries that were already distinct keep their order. Each column draws
    from its own child of ``SeedSequence(seed)``.
    """
    if not scale > 0:
        raise ValueError("jitter scale must be positive")
    m = as_residuals(matrix)
    v = np.array(m.values)
    children = np.random.SeedSequence(seed).spawn(m.d)
    for j, child in enumerate(children):
        rng = np.random.default_rng(child)
        gap = smallest_gap(v[:, j]) or 1.0
        col = v[:, j] + rng.uniform(0.0, scale * gap, size=m.n)
        # Continuous noise leaves ties with probability zero; redraw if unlucky.
        while np.unique(col).size != m.n:
            col = v[:, j] + rng.uniform(0.0, scale * gap, size=m.n)
        v[:, j] = col
    return ResidualMatrix(v, jittered=True, clamped=m.clamped)


def invert_rectangle(thresholds, model_at_test: ModelOutput) -> OutcomeRectangle | list:
    """Map residual thresholds ``W`` to outcome intervals.

    Point models give ``[f - W, f + W]``; quantile models with shift ``c``
    give ``[lo - (W - c), hi + (W - c)]``. A multi-row model returns one
    rectangle per row.
    """
    w = np.asarray(getattr(thresholds, "thresholds", thresholds), dtype=float).ravel()
    if np.any(w < 0) or np.any(np.isnan(w)):
        raise ValueError("thresholds must be nonnegative")
    n, d = model_at_test.shape
    if d != w.size:
        raise ShapeError(f"{w.size} thresholds for {d}-dimensional predictions")
    if model_at_test.kind == "point":
        f = model_at_test.point
        lower, upper = f - w, f + w
    else:
        lo, hi = model_at_test.lo, model_at_test.hi
        radius = w - model_at_test.shift
        # A radius below -(hi - lo)/2 would cross over; collapse at the midpoint.
        radius = np.maximum(radius, -(hi - lo) / 2)
        lower, upper = lo - radius, hi + radius
        upper = np.maximum(upper, lower)
    rects = [OutcomeRectangle(lower[i], upper[i]) for i in range(n)]
    return rects[0] if n == 1 else rects
