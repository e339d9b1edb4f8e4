"""Conformal quantiles and the moment algebra shared by every calibrator.

All standard deviations here use divisor ``n`` (not ``n - 1``); the
augmented moments describe the ``n + 1`` point sample obtained by adding a
hypothetical test residual ``z`` to the calibration residuals, again with
divisor ``n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDimension, InvalidLevel

# Below this size a full sort is cheaper than np.partition bookkeeping.
_SELECT_THRESHOLD = 64
# Guards ceil((1 - alpha)(n + 1)) against products like 0.3 * 10 = 3.0000000000000004.
_RANK_SLACK = 1e-9


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0) or math.isnan(alpha):
        raise InvalidLevel(f"alpha must lie in (0, 1), got {alpha!r}")
    return alpha


def quantile_rank(n: int, alpha: float) -> int:
    """Rank ``k = ceil((1 - alpha)(n + 1))`` of the conformal quantile."""
    alpha = check_alpha(alpha)
    return max(1, math.ceil((1.0 - alpha) * (n + 1) - _RANK_SLACK))


def conformal_quantile(scores, alpha: float) -> float:
    """The ``ceil((1 - alpha)(n + 1))``-th smallest of ``scores`` and ``+inf``.

    Returns ``inf`` exactly when the rank exceeds ``n``. Large inputs go
    through ``np.partition`` (introselect, linear expected time) instead of a
    full sort.
    """
    s = np.asarray(scores, dtype=float).ravel()
    n = s.size
    if n < 1:
        raise ValueError("conformal_quantile needs at least one score")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    k = quantile_rank(n, alpha)
    if k > n:
        return math.inf
    if n <= _SELECT_THRESHOLD:
        return float(np.sort(s, kind="stable")[k - 1])
    return float(np.partition(s, k - 1)[k - 1])


@dataclass(frozen=True)
class ScalingParams:
    """Per-dimension location/scale of ``n`` nonnegative residuals."""

    n: int
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).ravel()
        std = np.array(self.std, dtype=float).ravel()
        if self.n <= 1:
            raise ValueError(f"need n > 1 residuals, got n={self.n}")
        if mean.shape != std.shape:
            raise ValueError("mean and std must have the same length")
        for j, s in enumerate(std):
            if not (np.isfinite(s) and s > 0):
                raise DegenerateDimension(j)
        if np.any(mean < 0) or not np.all(np.isfinite(mean)):
            raise ValueError("residual means must be finite and nonnegative")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def d(self) -> int:
        return self.mean.size


def moments(residuals) -> ScalingParams:
    """Column means and divisor-``n`` standard deviations of an ``(n, d)`` table."""
    e = np.asarray(getattr(residuals, "values", residuals), dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    n = e.shape[0]
    if n <= 1:
        raise ValueError(f"need n > 1 residuals, got n={n}")
    if not np.all(np.isfinite(e)) or np.any(e < 0):
        raise ValueError("residuals must be finite and nonnegative")
    mean = e.mean(axis=0)
    std = np.sqrt(np.mean((e - mean) ** 2, axis=0))
    for j in range(e.shape[1]):
        # A constant column can leave rounding noise of order eps * |mean|.
        if std[j] <= 8 * np.finfo(float).eps * max(1.0, abs(mean[j])):
            raise DegenerateDimension(j)
    return ScalingParams(n=n, mean=mean, std=std)


def augmented_moments(params: ScalingParams, z, j: int | None = None):
    """Mean and std of the calibration sample augmented with one point ``z``.

    Uses the one-pass identity
    ``sigma(z)^2 = (z - mean)^2 / (n + 1) + std^2``, so nothing is re-summed.
    With ``j`` given, ``z`` is a value in dimension ``j``; otherwise ``z``
    broadcasts against the full mean/std vectors.
    """
    n = params.n
    mean = params.mean if j is None else params.mean[j]
    std = params.std if j is None else params.std[j]
    z = np.asarray(z, dtype=float)
    dev = z - mean
    aug_mean = (n * mean + z) / (n + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        aug_std = np.sqrt(dev * dev / (n + 1) + std * std)
    if aug_mean.ndim == 0:
        return float(aug_mean), float(aug_std)
    return aug_mean, aug_std


def standardized_max(t, mean, std) -> float | np.ndarray:
    """``max_j (t_j - mean_j) / std_j``; ``t`` may be a vector or an ``(n, d)`` table."""
    t = np.asarray(t, dtype=float)
    z = (t - np.asarray(mean, dtype=float)) / np.asarray(std, dtype=float)
    out = z.max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out
