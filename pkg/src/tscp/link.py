"""Link functions mapping a scalar score bound to per-dimension thresholds.

For a bound ``c`` on the standardized maximum of the augmented sample,
``omega(params, c)[j]`` is the largest test residual in dimension ``j``
compatible with that bound. The map is nondecreasing in ``c``, finite
exactly on ``c < n / sqrt(n + 1)``, and zero for ``c <= -n / sqrt(n + 1)``.
"""
from __future__ import annotations

import math

import numpy as np

from .core_stats import ScalingParams

# Radicands below this fraction of n**2 are treated as the singular limit.
RADICAND_RTOL = 1e-12

LinkContext = ScalingParams


def critical_radius(n: int) -> float:
    """``n / sqrt(n + 1)``: the almost-sure bound on augmented z-scores."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return n / math.sqrt(n + 1)


def _stretch(n: int, c: float) -> float:
    """``|c| * sqrt((n + 1)^2 / (n^2 - (n + 1) c^2))``, or inf at the singularity."""
    root = math.sqrt(n + 1)
    radicand = (n - root * abs(c)) * (n + root * abs(c))
    if radicand <= RADICAND_RTOL * n * n:
        return math.inf
    return abs(c) * (n + 1) / math.sqrt(radicand)


def omega(ctx: ScalingParams, c: float, j: int | None = None):
    """Threshold(s) ``omega_j(c)``; all dimensions when ``j`` is None."""
    c = float(c)
    n = ctx.n
    mean = ctx.mean if j is None else ctx.mean[j]
    std = ctx.std if j is None else ctx.std[j]
    crit = critical_radius(n)
    if math.isnan(c):
        raise ValueError("omega is undefined at NaN")
    if c >= crit:
        out = np.full_like(np.asarray(mean, dtype=float), math.inf)
    elif c <= -crit:
        out = np.zeros_like(np.asarray(mean, dtype=float))
    else:
        k = _stretch(n, c)
        if c >= 0:
            out = mean + std * k if math.isfinite(k) else np.full_like(mean, math.inf)
        else:
            out = np.maximum(0.0, mean - std * k) if math.isfinite(k) else np.zeros_like(mean)
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out
