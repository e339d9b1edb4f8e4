"""Baseline calibrators, test-only oracles, and a name-keyed dispatcher.

Every calibrator returns a :class:`ThresholdRectangle`: per-dimension
residual thresholds ``W_j`` in ``[0, inf]``. A test point is covered when
all of its residuals are at most the corresponding ``W_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_stats import check_alpha, conformal_quantile, standardized_max
from .errors import DegenerateDimension
from .residuals import as_residuals
from .transductive import gwc_calibrate, tscp_calibrate


@dataclass(frozen=True)
class ThresholdRectangle:
    thresholds: np.ndarray
    method: str
    alpha: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.thresholds, dtype=float).ravel()
        if np.any(np.isnan(w)) or np.any(w < 0):
            raise ValueError(f"thresholds must be nonnegative, got {w}")
        w.setflags(write=False)
        object.__setattr__(self, "thresholds", w)

    @property
    def d(self) -> int:
        return self.thresholds.size

    def covers(self, residuals) -> np.ndarray:
        """Row-wise coverage of an ``(m, d)`` residual table."""
        e = np.atleast_2d(np.asarray(residuals, dtype=float))
        return np.all(e <= self.thresholds, axis=1)

    def volume(self) -> float:
        """Residual-space volume ``prod W_j`` (inf when any side is inf)."""
        if np.any(np.isinf(self.thresholds)):
            return math.inf
        return float(np.prod(self.thresholds))


def clamped_rectangle(raw, method, alpha, **diagnostics) -> ThresholdRectangle:
    """Rectangle from raw thresholds, clamping negatives to 0 and keeping the raw values."""
    raw = np.asarray(raw, dtype=float)
    if np.any(raw < 0):
        diagnostics["raw_thresholds"] = raw.copy()
    return ThresholdRectangle(np.maximum(raw, 0.0), method, alpha, diagnostics)


def _sample_moments(e: np.ndarray, ddof: int):
    mean = e.mean(axis=0)
    std = e.std(axis=0, ddof=ddof)
    for j, s in enumerate(std):
        if not s > 8 * np.finfo(float).eps * max(1.0, abs(mean[j])):
            raise DegenerateDimension(j)
    return mean, std


def bonferroni(residuals, alpha: float) -> ThresholdRectangle:
    alpha = check_alpha(alpha)
    e = as_residuals(residuals).values
    d = e.shape[1]
    w = [conformal_quantile(e[:, j], alpha / d) for j in range(d)]
    return ThresholdRectangle(w, "bonferroni", alpha)


def unscaled_max(residuals, alpha: float) -> ThresholdRectangle:
    alpha = check_alpha(alpha)
    e = as_residuals(residuals).values
    q = conformal_quantile(e.max(axis=1), alpha)
    return ThresholdRectangle(np.full(e.shape[1], q), "unscaled-max", alpha)


def plugin_standardized(residuals, alpha: float) -> ThresholdRectangle:
    """Standardize with the calibration moments themselves (no guarantee)."""
    alpha = check_alpha(alpha)
    e = as_residuals(residuals).values
    mean, std = _sample_moments(e, ddof=1)
    q = conformal_quantile(standardized_max(e, mean, std), alpha)
    return clamped_rectangle(q * std + mean, "plugin (heuristic)", alpha, quantile=q)


def split_sizes(n: int, split_fraction: float) -> tuple[int, int]:
    if not 0.0 < split_fraction < 1.0:
        raise ValueError("split_fraction must lie in (0, 1)")
    n1 = math.floor(split_fraction * n)
    if n1 < 2 or n - n1 < 1:
        raise ValueError(f"split of n={n} at {split_fraction} leaves a fold too small")
    return n1, n - n1


def split_standardized(residuals, alpha: float, split_fraction: float = 0.5,
                       seed: int = 0) -> ThresholdRectangle:
    """Moments from a random first fold, quantile from the second."""
    alpha = check_alpha(alpha)
    e = as_residuals(residuals).values
    n1, _ = split_sizes(e.shape[0], split_fraction)
    perm = np.random.default_rng(seed).permutation(e.shape[0])
    first, second = e[perm[:n1]], e[perm[n1:]]
    mean, std = _sample_moments(first, ddof=1)
    q = conformal_quantile(standardized_max(second, mean, std), alpha)
    return clamped_rectangle(q * std + mean, "split", alpha, quantile=q,
                             fold_sizes=(n1, e.shape[0] - n1))


def population_oracle(residuals, alpha: float, mu_star, sigma_star) -> ThresholdRectangle:
    """Standardize with the true residual moments (simulation only)."""
    alpha = check_alpha(alpha)
    e = as_residuals(residuals).values
    mu = np.broadcast_to(np.asarray(mu_star, dtype=float), (e.shape[1],))
    sigma = np.broadcast_to(np.asarray(sigma_star, dtype=float), (e.shape[1],))
    if np.any(~(sigma > 0)):
        raise ValueError("sigma_star must be positive")
    q = conformal_quantile(standardized_max(e, mu, sigma), alpha)
    return clamped_rectangle(q * sigma + mu, "pop-oracle", alpha, quantile=q)


def transductive_oracle(residuals, test_residual, alpha: float) -> ThresholdRectangle:
    """Standardize with moments of the calibration sample plus the true test residual.

    The moments pool all ``n + 1`` residuals with divisor ``n`` and the
    quantile is over the ``n`` calibration scores, so the test point is
    covered exactly when its own standardized maximum is within the quantile.
    """
    alpha = check_alpha(alpha)
    e = as_residuals(residuals).values
    z = np.asarray(test_residual, dtype=float).ravel()
    if z.size != e.shape[1] or np.any(z < 0) or not np.all(np.isfinite(z)):
        raise ValueError("test residual must be a finite nonnegative d-vector")
    pooled = np.vstack([e, z])
    n = e.shape[0]
    mean = pooled.mean(axis=0)
    std = np.sqrt(((pooled - mean) ** 2).sum(axis=0) / n)
    if np.any(std <= 0):
        raise DegenerateDimension(int(np.argmin(std)))
    q = conformal_quantile(standardized_max(e, mean, std), alpha)
    return clamped_rectangle(q * std + mean, "trans-oracle", alpha, quantile=q)


def _gwc(residuals, alpha):
    res = gwc_calibrate(residuals, alpha)
    return ThresholdRectangle(res.thresholds, "gwc", res.alpha, {"quantile": res.quantile})


def _tscp(residuals, alpha, n_jobs=None):
    res = tscp_calibrate(residuals, alpha, n_jobs=n_jobs)
    diag = {"used_fallback": res.used_fallback, "search_kinds": res.search_kinds,
            "evaluations": res.evaluations, "exhausted": res.exhausted}
    return ThresholdRectangle(res.thresholds, "tscp", res.alpha, diag)


METHODS = {
    "bonferroni": bonferroni,
    "unscaled-max": unscaled_max,
    "plugin": plugin_standardized,
    "split": split_standardized,
    "gwc": _gwc,
    "tscp": _tscp,
}
ORACLES = {
    "pop-oracle": population_oracle,
    "trans-oracle": transductive_oracle,
}
# Methods with a finite-sample coverage guarantee.
GUARANTEED = ("bonferroni", "unscaled-max", "split", "gwc", "tscp", "pop-oracle", "trans-oracle")


class OracleGateError(PermissionError):
    """An oracle was requested without opting in to simulation-only methods."""


def calibrate(residuals, alpha: float, method: str, *, allow_oracles: bool = False,
              **options) -> ThresholdRectangle:
    """Dispatch by method name; oracles need ``allow_oracles=True``."""
    if method in METHODS:
        return METHODS[method](residuals, alpha, **options)
    if method in ORACLES:
        if not allow_oracles:
            raise OracleGateError(f"{method} uses information unavailable in practice; "
                                  "pass allow_oracles=True in simulations")
        return ORACLES[method](residuals, alpha=alpha, **options)
    raise ValueError(f"unknown method {method!r}; choose from "
                     f"{sorted(METHODS) + sorted(ORACLES)}")
