"""Synthetic multivariate regression experiments.

Features are standard normal, every outcome shares the linear signal
``X @ xi`` with ``xi ~ Unif(-10, 10)``, and per-dimension noise follows a
:class:`NoiseSpec`. An OLS model is fit on a training split, absolute
residuals on the calibration split feed each calibrator, and coverage and
residual-space volume are measured on the test split.
"""
from __future__ import annotations

import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .calibrators import calibrate
from .core_stats import check_alpha
from .errors import RankDeficient
from .residuals import ModelOutput, absolute_residuals, jitter

NOISE_VARIANTS = ("gaussian-hetero", "gaussian-homo", "laplace", "mixture", "gamma", "student-t")
DEFAULT_METHODS = ("bonferroni", "unscaled-max", "plugin", "split", "gwc", "tscp")
# Large sample used to approximate true residual moments for the population oracle.
ORACLE_MOMENT_DRAWS = 200_000


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family. Heterogeneous families use scale ``max(d, 10) - j + 1`` for
    dimension ``j = 1..d``; ``gaussian-homo`` and ``student-t`` have unit scale."""

    variant: str = "gaussian-hetero"
    df: float | None = None

    def __post_init__(self):
        if self.variant not in NOISE_VARIANTS:
            raise ValueError(f"unknown noise {self.variant!r}; choose from {NOISE_VARIANTS}")
        if self.variant == "student-t":
            if self.df is None or not self.df > 1:
                raise ValueError("student-t noise needs df > 1")
        elif self.df is not None:
            raise ValueError(f"df only applies to student-t, not {self.variant}")

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        m = re.fullmatch(r"student-t\(([^)]+)\)", text.strip())
        if m:
            return cls("student-t", float(m.group(1)))
        return cls(text.strip())

    def __str__(self) -> str:
        return f"student-t({self.df:g})" if self.variant == "student-t" else self.variant

    def scales(self, d: int) -> np.ndarray:
        if self.variant in ("gaussian-homo", "student-t"):
            return np.ones(d)
        return max(d, 10) - np.arange(1, d + 1) + 1.0

    def sample(self, rng: np.random.Generator, size: int, d: int) -> np.ndarray:
        s = self.scales(d)
        shape = (size, d)
        v = self.variant
        if v in ("gaussian-hetero", "gaussian-homo"):
            return rng.standard_normal(shape) * s
        if v == "laplace":
            return rng.laplace(0.0, 1.0, shape) * s
        if v == "mixture":
            coin = rng.random(shape) < 0.5
            lap = rng.laplace(0.0, 1.0, shape)
            gau = rng.standard_normal(shape)
            return np.where(coin, lap, gau) * s
        if v == "gamma":
            return rng.gamma(1.0, 1.0, shape) * s
        return rng.standard_t(self.df, shape)

    def residual_moments(self, d: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Mean and std of ``|noise - E noise|`` per dimension (the residuals of a
        perfect mean model). Closed form for Gaussian and Laplace, otherwise a
        large seeded Monte Carlo sample."""
        s = self.scales(d)
        if self.variant in ("gaussian-hetero", "gaussian-homo"):
            return s * math.sqrt(2 / math.pi), s * math.sqrt(1 - 2 / math.pi)
        if self.variant == "laplace":
            return s.copy(), s.copy()
        rng = np.random.default_rng(seed)
        eps = self.sample(rng, ORACLE_MOMENT_DRAWS, d)
        center = s if self.variant == "gamma" else 0.0
        r = np.abs(eps - center)
        return r.mean(axis=0), r.std(axis=0)


@dataclass(frozen=True)
class ExperimentConfig:
    d_x: int = 10
    d: int = 10
    n_train: int = 7200
    n_cal: int = 100
    n_test: int = 800
    alpha: float = 0.1
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    repetitions: int = 200
    seed: int = 0
    methods: tuple = DEFAULT_METHODS
    freeze_xi: bool = False
    jitter_scale: float | None = None
    split_fraction: float = 0.5

    def __post_init__(self):
        if isinstance(self.noise, str):
            object.__setattr__(self, "noise", NoiseSpec.parse(self.noise))
        object.__setattr__(self, "methods", tuple(self.methods))
        for name in ("d_x", "d", "n_train", "n_cal", "n_test", "repetitions"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        check_alpha(self.alpha)
        if self.n_train <= self.d_x:
            raise ValueError("n_train must exceed d_x for least squares")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["noise"] = str(self.noise)
        out["methods"] = list(self.methods)
        return out


@dataclass(frozen=True)
class LabeledSet:
    x: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[0]


# Role indices for the per-repetition seed tree.
_XI, _X, _EPS, _SPLIT = range(4)


def _role_rngs(seed) -> list[np.random.Generator]:
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in seq.spawn(4)]


def draw_xi(rng: np.random.Generator, d_x: int) -> np.ndarray:
    return rng.uniform(-10.0, 10.0, d_x)


def generate(config: ExperimentConfig, seed, xi: np.ndarray | None = None):
    """Draw train, calibration and test sets.

    ``xi`` overrides the coefficient draw (used to freeze it across
    repetitions). Returns ``(train, cal, test, xi)``.
    """
    rngs = _role_rngs(seed)
    if xi is None:
        xi = draw_xi(rngs[_XI], config.d_x)
    total = config.n_train + config.n_cal + config.n_test
    x = rngs[_X].standard_normal((total, config.d_x))
    signal = x @ xi
    y = signal[:, None] + config.noise.sample(rngs[_EPS], total, config.d)
    a, b = config.n_train, config.n_train + config.n_cal
    return LabeledSet(x[:a], y[:a]), LabeledSet(x[a:b], y[a:b]), LabeledSet(x[b:], y[b:]), xi


@dataclass(frozen=True)
class LinearModel:
    intercept: np.ndarray
    coef: np.ndarray

    def predict(self, x) -> ModelOutput:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return ModelOutput("point", point=self.intercept + x @ self.coef)


def fit_ols(train: LabeledSet) -> LinearModel:
    """Least squares with intercept for every outcome column at once."""
    x = np.asarray(train.x, dtype=float)
    y = np.asarray(train.y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    design = np.hstack([np.ones((x.shape[0], 1)), x])
    beta, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise RankDeficient(f"design has rank {rank} < {design.shape[1]}")
    return LinearModel(beta[0], beta[1:])


@dataclass
class MethodSummary:
    method: str
    coverage_mean: float
    coverage_std: float
    volume_mean: float
    volume_std: float
    volume_median: float
    failures: int
    fallbacks: int
    wall_time_mean: float


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: list
    summaries: dict

    def summary(self, method: str) -> MethodSummary:
        return self.summaries[method]

    def per_rep(self, method: str, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records
                         if r["method"] == method and r["error"] is None])


def _volume(w: np.ndarray) -> float:
    if np.any(np.isinf(w)):
        return math.inf
    return float(np.prod(w))


def _method_options(method: str, config: ExperimentConfig, split_seed: int, test_res):
    if method == "split":
        return {"split_fraction": config.split_fraction, "seed": split_seed}
    if method == "pop-oracle":
        mu, sigma = config.noise.residual_moments(config.d)
        return {"mu_star": mu, "sigma_star": sigma}
    if method == "trans-oracle":
        raise ValueError("trans-oracle needs one test residual; evaluate it with "
                         "transductive_oracle directly")
    return {}


def run_repetition(config: ExperimentConfig, rep: int, xi: np.ndarray | None = None) -> list:
    seed = np.random.SeedSequence(config.seed, spawn_key=(rep,))
    train, cal, test, xi = generate(config, seed, xi)
    model = fit_ols(train)
    cal_res = absolute_residuals(cal.y, model.predict(cal.x))
    test_res = absolute_residuals(test.y, model.predict(test.x)).values
    if config.jitter_scale:
        cal_res = jitter(cal_res, config.jitter_scale, seed=rep)
    split_seed = int(_role_rngs(seed)[_SPLIT].integers(2**63))
    out = []
    for method in config.methods:
        rec = {"rep": rep, "method": method, "coverage": math.nan, "volume": math.nan,
               "thresholds": None, "used_fallback": False, "error": None, "wall_time": 0.0}
        start = time.perf_counter()
        try:
            opts = _method_options(method, config, split_seed, test_res)
            rect = calibrate(cal_res, config.alpha, method, allow_oracles=True, **opts)
            w = rect.thresholds
            rec["coverage"] = float(np.mean(np.all(test_res <= w, axis=1)))
            rec["volume"] = _volume(w)
            rec["thresholds"] = w.copy()
            rec["used_fallback"] = bool(rect.diagnostics.get("used_fallback", False))
        except Exception as exc:  # recorded per repetition, never fatal
            rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["wall_time"] = time.perf_counter() - start
        out.append(rec)
    return out


def _finite_stats(v: np.ndarray) -> tuple[float, float, float]:
    if v.size == 0:
        return math.nan, math.nan, math.nan
    med = float(np.median(v))
    if np.any(np.isinf(v)):
        return math.inf, math.inf, med
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0, med


def summarize(config: ExperimentConfig, records: list) -> dict:
    out = {}
    for method in config.methods:
        rows = [r for r in records if r["method"] == method]
        ok = [r for r in rows if r["error"] is None]
        cov = np.array([r["coverage"] for r in ok])
        vol = np.array([r["volume"] for r in ok])
        vmean, vstd, vmed = _finite_stats(vol)
        out[method] = MethodSummary(
            method=method,
            coverage_mean=float(cov.mean()) if cov.size else math.nan,
            coverage_std=float(cov.std(ddof=1)) if cov.size > 1 else 0.0,
            volume_mean=vmean, volume_std=vstd, volume_median=vmed,
            failures=len(rows) - len(ok),
            fallbacks=sum(r["used_fallback"] for r in ok),
            wall_time_mean=float(np.mean([r["wall_time"] for r in rows])) if rows else 0.0,
        )
    return out


def frozen_xi(config: ExperimentConfig) -> np.ndarray | None:
    """Coefficients shared by all repetitions when ``freeze_xi`` is set, else None."""
    if not config.freeze_xi:
        return None
    # a spawn key outside the repetition range keeps this stream separate
    seq = np.random.SeedSequence(config.seed, spawn_key=(2**32,))
    return draw_xi(np.random.default_rng(seq), config.d_x)


def run_experiment(config: ExperimentConfig, methods=None, workers: int = 1) -> ExperimentReport:
    """All repetitions of ``config``; ``workers > 1`` uses a process pool.

    Results are merged in repetition order, so the report does not depend on
    ``workers``.
    """
    if methods is not None:
        config = ExperimentConfig(**{**config.__dict__, "methods": tuple(methods)})
    xi = frozen_xi(config)
    reps = range(config.repetitions)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_repetition, [config] * len(reps), reps, [xi] * len(reps)))
    else:
        chunks = [run_repetition(config, r, xi) for r in reps]
    records = [rec for chunk in chunks for rec in chunk]
    return ExperimentReport(config, records, summarize(config, records))
