"""Slow, independent verifiers for the closed forms and the row search.

Everything here is written as plain scalar loops, bisection and grid search
so that it shares no code path with the vectorized formulas it checks.
These routines exist to be trusted, not to be fast.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core_stats import ScalingParams, augmented_moments
from .errors import BudgetExceeded
from .link import omega
from .residuals import as_residuals
from .transductive import POSITIVE_FLOOR, GwcResult, gwc_calibrate

DEFAULT_BUDGET = 100_000
GRID_POINTS = 2000
INV_PHI = (math.sqrt(5) - 1) / 2


def _mean(xs):
    return math.fsum(xs) / len(xs)


def _std_divisor(xs, divisor):
    m = _mean(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / divisor)


def _kth_smallest_with_inf(scores, alpha):
    n = len(scores)
    k = math.ceil((1 - alpha) * (n + 1) - 1e-9)
    ordered = sorted(scores) + [math.inf]
    return ordered[k - 1]


@dataclass(frozen=True)
class EnumerationReport:
    boundaries: np.ndarray
    visited: int
    nonempty: int
    union_volume: float


def enumerate_boundaries(residuals, alpha: float, budget: int = DEFAULT_BUDGET,
                         gwc: GwcResult | None = None) -> EnumerationReport:
    """Brute-force ``L_j = max_h B^h_j`` over the full grid ``[n+1]^d``.

    Every cell is scored from scratch: order statistics by ``sorted``,
    augmented moments by re-summing the ``n + 1`` point sample, quantiles by
    sorting. The GWC thresholds are taken from ``gwc`` (checked separately
    against ``gwc_sup_grid``). Also returns the exact volume of the union of
    the cell-clipped local boxes; the cells are disjoint so it is a sum.
    """
    e = as_residuals(residuals).values
    n, d = e.shape
    cells = (n + 1) ** d
    if cells > budget:
        raise BudgetExceeded(f"{cells} cells exceed the budget of {budget}")
    if gwc is None:
        gwc = gwc_calibrate(e, alpha)
    w = [float(x) for x in gwc.thresholds]
    cols = [[float(x) for x in e[:, j]] for j in range(d)]
    params = gwc.params
    mu = [_mean(c) for c in cols]

    def aug_std(j, z):
        return _std_divisor(cols[j] + [z], n)

    def aug_mean(j, z):
        return _mean(cols[j] + [z])

    order = [[0.0] + sorted(c) + [math.inf] for c in cols]
    upper = [[min(order[j][k], w[j]) for k in range(n + 2)] for j in range(d)]

    offsets = []
    for j in range(d):
        at_zero = aug_mean(j, 0.0) / aug_std(j, 0.0)
        at_w = (aug_mean(j, w[j]) / aug_std(j, w[j]) if math.isfinite(w[j])
                else 1 / math.sqrt(n + 1))
        offsets.append(min(at_zero, at_w))

    def scale(j, k):
        lo, hi = order[j][k - 1], upper[j][k]
        closest = min(max(mu[j], lo), hi)
        return aug_std(j, closest) if math.isfinite(closest) else math.inf

    scale_cache = {(j, k): scale(j, k) for j in range(d) for k in range(1, n + 2)
                   if order[j][k - 1] < upper[j][k]}

    best = [0.0] * d
    union = 0.0
    nonempty = 0
    rows = [[float(x) for x in row] for row in e]
    for h in itertools.product(range(1, n + 2), repeat=d):
        if any((j, h[j]) not in scale_cache for j in range(d)):
            continue
        nonempty += 1
        r = [scale_cache[(j, h[j])] for j in range(d)]
        scores = [max(row[j] / r[j] - offsets[j] for j in range(d)) for row in rows]
        q = _kth_smallest_with_inf(scores, alpha)
        local = omega(params, q)
        lengths = []
        for j in range(d):
            lo, hi = order[j][h[j] - 1], upper[j][h[j]]
            lw = float(local[j])
            b = min(hi, lw) if (hi > lo and lw > lo) else 0.0
            if b <= POSITIVE_FLOOR:
                b = 0.0
            best[j] = max(best[j], b)
            lengths.append(max(0.0, min(hi, lw) - lo))
        if all(x > 0 for x in lengths):
            union += math.prod(lengths)
    return EnumerationReport(np.array(best), cells, nonempty, union)


def _augmented_score(ctx: ScalingParams, z: float, j: int) -> float:
    m, s = augmented_moments(ctx, z, j)
    return (z - m) / s


def omega_bisection(ctx: ScalingParams, c: float, j: int, rtol: float = 1e-13,
                    max_doublings: int = 1100) -> float:
    """Largest ``z >= 0`` whose augmented z-score is at most ``c``, by bisection.

    The augmented z-score is increasing in ``z``. The upper bracket is doubled
    until it exceeds ``c``; if it never does the threshold is infinite. The
    score's supremum ``n / sqrt(n + 1)`` is approached but never attained, so
    bounds at or above it are infinite without searching.
    """
    if c >= ctx.n / math.sqrt(ctx.n + 1):
        return math.inf
    if _augmented_score(ctx, 0.0, j) > c:
        return 0.0
    hi = max(1.0, 2 * float(ctx.mean[j]))
    for _ in range(max_doublings):
        if not math.isfinite(hi):
            return math.inf
        if _augmented_score(ctx, hi, j) > c:
            break
        hi *= 2
    else:
        return math.inf
    lo = 0.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if _augmented_score(ctx, mid, j) <= c:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * max(1.0, hi):
            break
    return lo


def golden_max(f, a: float, b: float, tol: float = 1e-10, max_iter: int = 200):
    """Golden-section search for the maximum of a unimodal ``f`` on ``[a, b]``."""
    c = b - INV_PHI * (b - a)
    dd = a + INV_PHI * (b - a)
    fc, fd = f(c), f(dd)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc > fd:
            b, dd, fd = dd, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, dd, fd
            dd = a + INV_PHI * (b - a)
            fd = f(dd)
    x = 0.5 * (a + b)
    return x, f(x)


def _grid_then_refine(f, grid, maximize=True):
    sign = 1.0 if maximize else -1.0
    vals = [sign * f(z) for z in grid]
    i = int(np.argmax(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, len(grid) - 1)]
    best = vals[i]
    if b > a:
        _, refined = golden_max(lambda z: sign * f(z), a, b)
        best = max(best, refined)
    return sign * best


def gwc_sup_grid(ctx: ScalingParams, t: float, j: int) -> float:
    """``sup_{z >= 0} (t - mean(z)) / std(z)`` by log grid, refinement and tail limit."""
    scale = 1.0 + float(ctx.mean[j])

    def g(z):
        m, s = augmented_moments(ctx, z, j)
        return (t - m) / s

    grid = np.concatenate([[0.0], np.geomspace(1e-9 * scale, 1e6 * scale, GRID_POINTS)])
    best = _grid_then_refine(g, list(grid), maximize=True)
    return max(best, -1.0 / math.sqrt(ctx.n + 1))


def lwc_extrema_grid(ctx: ScalingParams, lower: float, upper: float,
                     gwc_threshold: float, j: int) -> tuple[float, float]:
    """Numeric ``(min_scale, min_ratio)`` for one cell side in dimension ``j``.

    ``min_scale`` is the infimum of the augmented std over ``[lower, upper)``
    (so ``t / min_scale`` is the supremum of ``t / std``); ``min_ratio`` is
    the infimum of ``mean(z) / std(z)`` over ``[0, gwc_threshold]``.
    """
    def std(z):
        return augmented_moments(ctx, z, j)[1]

    def ratio(z):
        m, s = augmented_moments(ctx, z, j)
        return m / s

    scale = 1.0 + float(ctx.mean[j])
    if math.isfinite(upper):
        grid = list(np.linspace(lower, upper, GRID_POINTS))
    else:
        grid = [lower] + list(lower + np.geomspace(1e-9 * scale, 1e6 * scale, GRID_POINTS))
    min_scale = _grid_then_refine(std, grid, maximize=False)

    if math.isfinite(gwc_threshold):
        grid = list(np.linspace(0.0, gwc_threshold, GRID_POINTS))
        min_ratio = _grid_then_refine(ratio, grid, maximize=False)
    else:
        grid = [0.0] + list(np.geomspace(1e-9 * scale, 1e6 * scale, GRID_POINTS))
        min_ratio = min(_grid_then_refine(ratio, grid, maximize=False),
                        1.0 / math.sqrt(ctx.n + 1))
    return min_scale, min_ratio


@dataclass
class CheckResult:
    name: str
    instances: int
    max_deviation: float
    tolerance: float
    failures: list

    @property
    def passed(self) -> bool:
        return not self.failures


def _deviation(a: float, b: float) -> float:
    if math.isinf(a) or math.isinf(b):
        return 0.0 if a == b else math.inf
    return abs(a - b)


def small_instance(rng: np.random.Generator, n_range=(5, 12), d_range=(1, 3)):
    """Random jittered residual table and level for enumeration checks."""
    from .residuals import jitter

    n = int(rng.integers(n_range[0], n_range[1] + 1))
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    alpha = float(rng.choice([0.1, 0.2, 0.5]))
    family = int(rng.integers(3))
    shape = (n, d)
    raw = (rng.exponential(size=shape), rng.lognormal(0.0, 1.0, shape),
           rng.uniform(size=shape))[family] * rng.uniform(0.1, 10.0, d)
    return jitter(raw, seed=int(rng.integers(2**32))).values, alpha


def check_link(rng, instances, tol) -> CheckResult:
    from .core_stats import moments
    from .link import critical_radius

    worst, failures = 0.0, []
    for i in range(instances):
        n = int(rng.integers(3, 60))
        params = moments(rng.lognormal(0.0, 1.0, (n, 1)) * rng.uniform(0.1, 10.0))
        crit = critical_radius(n)
        c = float(rng.uniform(-1.2 * crit, 1.2 * crit))
        closed, numeric = omega(params, c, 0), omega_bisection(params, c, 0)
        dev = _deviation(closed, numeric) / max(1.0, abs(closed) if math.isfinite(closed) else 1.0)
        worst = max(worst, dev)
        if dev > tol:
            failures.append(f"instance {i}: n={n} c={c!r} closed={closed!r} bisection={numeric!r}")
    return CheckResult("link", instances, worst, tol, failures)


def check_gwc(rng, instances, tol) -> CheckResult:
    from .core_stats import moments
    from .transductive import phi_gwc

    worst, failures = 0.0, []
    for i in range(instances):
        n = int(rng.integers(3, 60))
        params = moments(rng.lognormal(0.0, 1.0, (n, 1)) * rng.uniform(0.1, 10.0))
        t = float(params.mean[0] * rng.choice([0.05, 0.5, 1.0, 2.0, 10.0]) * rng.uniform(0, 2))
        dev = abs(phi_gwc(params, np.array([t])) - gwc_sup_grid(params, t, 0))
        worst = max(worst, dev)
        if dev > tol:
            failures.append(f"instance {i}: n={n} t={t!r} deviation={dev:.3g}")
    return CheckResult("gwc", instances, worst, tol, failures)


def check_lwc(rng, instances, tol) -> CheckResult:
    from .transductive import LocalBounds

    worst, failures = 0.0, []
    for i in range(instances):
        e, alpha = small_instance(rng, (4, 20), (1, 3))
        bounds = LocalBounds(e, alpha)
        j = int(rng.integers(bounds.d))
        nonempty = [k for k in range(1, bounds.n + 2)
                    if bounds.sorted.stats[k - 1, j] < bounds.upper[k, j]]
        k = int(rng.choice(nonempty))
        lower, upper = bounds.sorted.stats[k - 1, j], bounds.upper[k, j]
        min_scale, min_ratio = lwc_extrema_grid(bounds.params, lower, upper,
                                                bounds.gwc.thresholds[j], j)
        dev = max(_deviation(bounds.scale(k, j), min_scale),
                  _deviation(float(bounds.offsets[j]), min_ratio))
        worst = max(worst, dev)
        if dev > tol:
            failures.append(f"instance {i}: cell {k} dim {j} deviation={dev:.3g}")
    return CheckResult("lwc", instances, worst, tol, failures)


def check_enumeration(rng, instances, tol, budget=DEFAULT_BUDGET) -> CheckResult:
    from .transductive import tscp_calibrate

    worst, failures, done = 0.0, [], 0
    while done < instances:
        e, alpha = small_instance(rng)
        res = tscp_calibrate(e, alpha)
        if res.used_fallback:
            continue
        brute = enumerate_boundaries(e, alpha, budget=budget, gwc=res.gwc).boundaries
        dev = max(_deviation(float(a), float(b)) for a, b in zip(res.thresholds, brute))
        worst = max(worst, dev)
        if dev > tol:
            failures.append(f"instance {done}: n={e.shape[0]} d={e.shape[1]} alpha={alpha} "
                            f"shortcut={res.thresholds.tolist()} enumeration={brute.tolist()}")
        done += 1
    return CheckResult("enumeration", instances, worst, tol, failures)


DEFAULT_TOLERANCES = {"link": 1e-8, "gwc": 1e-6, "lwc": 1e-6, "enumeration": 1e-9}


def verification_suite(seed: int = 0, instances: int = 200, budget: int = DEFAULT_BUDGET,
                       tolerance: float | None = None) -> list[CheckResult]:
    """Every closed form against its numeric oracle, plus shortcut vs enumeration.

    ``tolerance`` overrides every per-check default.
    """
    tol = {k: (tolerance if tolerance is not None else v) for k, v in DEFAULT_TOLERANCES.items()}
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]
    return [
        check_link(rngs[0], instances, tol["link"]),
        check_gwc(rngs[1], instances, tol["gwc"]),
        check_lwc(rngs[2], instances, tol["lwc"]),
        check_enumeration(rngs[3], instances, tol["enumeration"], budget),
    ]
