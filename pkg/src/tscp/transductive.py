"""Transductively standardized conformal calibration.

Two calibrators live here:

* ``gwc_calibrate`` bounds the oracle quantile by the worst case over every
  possible test residual (cost ``O(nd)``).
* ``tscp_calibrate`` partitions the GWC box into cells indexed by the order
  statistics of each residual column, bounds the oracle quantile cell by
  cell, and reports the enclosing rectangle. Only ``d`` rows of the
  ``(n + 1)^d`` cell grid are ever visited: each side ``L_j`` is found by a
  binary or backward search along the row through the mean cell ``h*``.

Cell indices are 1-based, matching order-statistic ranks: cell coordinate
``k`` in dimension ``j`` is ``[E_(k-1), min(E_(k), w_j))`` with sentinels
``E_(0) = 0`` and ``E_(n+1) = inf``, where ``w`` are the GWC thresholds.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core_stats import (ScalingParams, augmented_moments, check_alpha,
                         conformal_quantile, moments)
from .errors import EmptyCell
from .link import omega
from .residuals import as_residuals

# Cell bounds at or below this are zero; the searches branch on zero/nonzero.
POSITIVE_FLOOR = 1e-12


def phi_gwc(ctx: ScalingParams, t) -> float | np.ndarray:
    """Worst case over ``z >= 0`` of the augmented standardized maximum at ``t``.

    ``t`` may be one residual vector or an ``(n, d)`` table (one score per row).
    Per dimension the supremum is the largest of: the value at ``z = 0``, the
    value at the stationary point ``mean - std^2 / (t - mean)`` when that is
    nonnegative, and the ``z -> inf`` limit ``-1 / sqrt(n + 1)``.
    """
    t = np.asarray(t, dtype=float)
    mu, sd, n = ctx.mean, ctx.std, ctx.n
    m0, s0 = augmented_moments(ctx, 0.0)
    at_zero = (t - m0) / s0
    diff = t - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        zstar = mu - sd * sd / diff
    zstar = np.where((diff != 0) & (zstar >= 0), zstar, 0.0)
    mz, sz = augmented_moments(ctx, zstar)
    at_stationary = (t - mz) / sz
    per_dim = np.maximum(np.maximum(at_zero, at_stationary), -1.0 / math.sqrt(n + 1))
    out = per_dim.max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class GwcResult:
    params: ScalingParams
    alpha: float
    quantile: float
    thresholds: np.ndarray
    scores: np.ndarray


def gwc_calibrate(residuals, alpha: float) -> GwcResult:
    alpha = check_alpha(alpha)
    e = as_residuals(residuals).values
    params = moments(e)
    scores = phi_gwc(params, e)
    q = conformal_quantile(scores, alpha)
    return GwcResult(params=params, alpha=alpha, quantile=q,
                     thresholds=omega(params, q), scores=scores)


@dataclass(frozen=True)
class SortedResiduals:
    """Order statistics with sentinels: ``stats[k, j] = E_(k)`` for k = 0..n+1."""

    stats: np.ndarray

    @classmethod
    def from_residuals(cls, residuals) -> "SortedResiduals":
        e = as_residuals(residuals).values
        n, d = e.shape
        stats = np.empty((n + 2, d))
        stats[0] = 0.0
        stats[1 : n + 1] = np.sort(e, axis=0)
        stats[n + 1] = math.inf
        stats.setflags(write=False)
        return cls(stats)

    @property
    def n(self) -> int:
        return self.stats.shape[0] - 2


def mean_index(sorted_res: SortedResiduals, params: ScalingParams) -> np.ndarray:
    """Cell index ``h*`` with ``E_(h*-1) <= mean <= E_(h*)`` in every dimension."""
    inner = sorted_res.stats[1:-1]
    below = [np.searchsorted(inner[:, j], params.mean[j], side="left")
             for j in range(inner.shape[1])]
    return np.asarray(below, dtype=int) + 1


class LocalBounds:
    """Calibration state for cell-wise (local worst case) bounds.

    Holds the residuals, their moments, the GWC result, the order statistics,
    the clipped upper cell edges ``U`` and the per-dimension offsets ``c_j``.
    Everything is precomputed once so that scoring a cell costs ``O(nd)``
    and scoring a row member costs ``O(n)``.
    """

    def __init__(self, residuals, alpha: float, gwc: GwcResult | None = None):
        self.alpha = check_alpha(alpha)
        self.residuals = as_residuals(residuals).values
        self.gwc = gwc if gwc is not None else gwc_calibrate(self.residuals, alpha)
        self.params = self.gwc.params
        self.sorted = SortedResiduals.from_residuals(self.residuals)
        n, d = self.residuals.shape
        self.n, self.d = n, d
        stats = self.sorted.stats
        # upper[k, j] = U^k_j for k = 1..n+1 (row 0 unused).
        self.upper = np.minimum(stats, self.gwc.thresholds[None, :])
        self.offsets = lwc_offsets(self.params, self.gwc.thresholds)
        self.h_star = mean_index(self.sorted, self.params)

    def lower_edge(self, k, j):
        return self.sorted.stats[k, j]

    def cell_nonempty(self, h) -> bool:
        h = np.asarray(h, dtype=int)
        cols = np.arange(self.d)
        return bool(np.all(self.sorted.stats[h - 1, cols] < self.upper[h, cols]))

    def scale(self, k: int, j: int) -> float:
        """``r_j(k)``: smallest augmented std over the cell interval in dimension j."""
        lower = self.sorted.stats[k - 1, j]
        upper = self.upper[k, j]
        mu = self.params.mean[j]
        if lower <= mu < upper:
            return float(self.params.std[j])
        s_lo = augmented_moments(self.params, lower, j)[1]
        s_hi = augmented_moments(self.params, upper, j)[1] if math.isfinite(upper) else math.inf
        return min(s_lo, s_hi)

    def scales(self, h) -> np.ndarray:
        return np.array([self.scale(int(k), j) for j, k in enumerate(h)])

    def phi(self, t, h) -> float | np.ndarray:
        if not self.cell_nonempty(h):
            raise EmptyCell(f"cell {tuple(int(x) for x in h)} is empty")
        t = np.asarray(t, dtype=float)
        out = (t / self.scales(h) - self.offsets).max(axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def local_bound(self, h) -> np.ndarray | None:
        """Thresholds ``omega(Q_lwc(h))`` for cell ``h``, or None when it is empty."""
        if not self.cell_nonempty(h):
            return None
        q = conformal_quantile(self.phi(self.residuals, h), self.alpha)
        return omega(self.params, q)

    def cell_bound(self, k: int, j: int, local_j: float | None) -> float:
        """``B^h_j`` given the cell's dimension-j coordinate and local threshold."""
        if local_j is None:
            return 0.0
        lower = self.sorted.stats[k - 1, j]
        upper = self.upper[k, j]
        if upper > lower and local_j > lower:
            b = min(upper, local_j)
            return b if b > POSITIVE_FLOOR else 0.0
        return 0.0


def lwc_offsets(params: ScalingParams, gwc_thresholds) -> np.ndarray:
    """``c_j = min(mean(0)/std(0), mean(w)/std(w))`` with ``w`` the GWC threshold.

    For an infinite ``w`` the second term is its limit ``1 / sqrt(n + 1)``.
    """
    w = np.asarray(gwc_thresholds, dtype=float)
    m0, s0 = augmented_moments(params, 0.0)
    finite = np.isfinite(w)
    mw, sw = augmented_moments(params, np.where(finite, w, 0.0))
    at_w = np.where(finite, mw / sw, 1.0 / math.sqrt(params.n + 1))
    return np.minimum(m0 / s0, at_w)


def phi_lwc(bounds: LocalBounds, t, h) -> float | np.ndarray:
    return bounds.phi(t, h)


def cell_nonempty(bounds: LocalBounds, h) -> bool:
    return bounds.cell_nonempty(h)


def local_bound(bounds: LocalBounds, h):
    return bounds.local_bound(h)


@dataclass
class RowSearch:
    """Outcome of the boundary search along ``Row_j(h*)``."""

    dimension: int
    value: float
    kind: str
    index: int | None
    evaluations: int
    exhausted: bool = False


class _RowEvaluator:
    """Scores row members of ``Row_j(h*)`` reusing the fixed off-row terms."""

    def __init__(self, bounds: LocalBounds, j: int):
        self.b = bounds
        self.j = j
        e = bounds.residuals
        h = bounds.h_star
        others = [k for k in range(bounds.d) if k != j]
        if others:
            r = np.array([bounds.scale(int(h[k]), k) for k in others])
            self.base = (e[:, others] / r - bounds.offsets[others]).max(axis=1)
        else:
            self.base = np.full(bounds.n, -math.inf)
        self.column = e[:, j]
        self.evaluations = 0
        self._cache: dict[int, float] = {}

    def bound(self, k: int) -> float:
        if k in self._cache:
            return self._cache[k]
        b, j = self.b, self.j
        self.evaluations += 1
        lower = b.sorted.stats[k - 1, j]
        if not lower < b.upper[k, j]:
            value = 0.0
        else:
            scores = np.maximum(self.base, self.column / b.scale(k, j) - b.offsets[j])
            q = conformal_quantile(scores, b.alpha)
            value = b.cell_bound(k, j, omega(b.params, q, j))
        self._cache[k] = value
        return value


def boundary_search(bounds: LocalBounds, j: int) -> RowSearch:
    """Side ``L_j`` of the TSCP rectangle, searching only ``Row_j(h*)``.

    If the mean cell contributes width in dimension j, the nonzero bounds
    along the row form a prefix starting at ``h*_j`` and grow toward its end,
    so a binary search finds the last nonzero one. Otherwise the row is
    scanned backward from ``h*_j - 1`` to the first nonzero bound. When no
    cell contributes, ``L_j = 0`` and the result is flagged ``exhausted``.
    """
    row = _RowEvaluator(bounds, j)
    start = int(bounds.h_star[j])
    if row.bound(start) > 0:
        lo, hi = start, bounds.n + 1
        while lo < hi:
            m = (lo + hi + 1) // 2
            if row.bound(m) > 0:
                lo = m
            else:
                hi = m - 1
        return RowSearch(j, row.bound(lo), "binary", lo, row.evaluations)
    for k in range(start - 1, 0, -1):
        value = row.bound(k)
        if value > 0:
            return RowSearch(j, value, "backward", k, row.evaluations)
    return RowSearch(j, 0.0, "backward", None, row.evaluations, exhausted=True)


@dataclass(frozen=True)
class TscpResult:
    thresholds: np.ndarray
    used_fallback: bool
    alpha: float
    gwc: GwcResult
    h_star: np.ndarray
    searches: list = field(default_factory=list)

    @property
    def search_kinds(self) -> list[str]:
        return [s.kind for s in self.searches]

    @property
    def evaluations(self) -> list[int]:
        return [s.evaluations for s in self.searches]

    @property
    def exhausted(self) -> list[int]:
        return [s.dimension for s in self.searches if s.exhausted]


def tscp_calibrate(residuals, alpha: float, n_jobs: int | None = None) -> TscpResult:
    """TSCP thresholds; falls back to GWC when the mean cell is empty.

    The thresholds do not depend on any test input and can be reused for
    every test point. ``n_jobs > 1`` runs the per-dimension searches in a
    thread pool; results do not depend on scheduling.
    """
    bounds = LocalBounds(residuals, alpha)
    gwc = bounds.gwc
    if not bounds.cell_nonempty(bounds.h_star):
        return TscpResult(thresholds=gwc.thresholds.copy(), used_fallback=True,
                          alpha=bounds.alpha, gwc=gwc, h_star=bounds.h_star)
    dims = range(bounds.d)
    if n_jobs and n_jobs > 1 and bounds.d > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            searches = list(pool.map(lambda j: boundary_search(bounds, j), dims))
    else:
        searches = [boundary_search(bounds, j) for j in dims]
    thresholds = np.array([s.value for s in searches], dtype=float)
    return TscpResult(thresholds=thresholds, used_fallback=False, alpha=bounds.alpha,
                      gwc=gwc, h_star=bounds.h_star, searches=searches)
