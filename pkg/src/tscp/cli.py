"""Command-line front end.

Commands: ``calibrate``, ``predict``, ``benchmark``, ``verify``, ``simulate``.

File formats (CSV, header row first, infinity written as ``inf``):

* residuals: ``e1,...,ed``, one calibration point per row
* point predictions: ``f1,...,fd``; quantile predictions: ``lo1,hi1,...,lod,hid``
* thresholds: ``method,alpha,w1,...,wd`` with a single data row
* intervals: ``l1,u1,...,ld,ud``, one test point per row

Floats are written with ``repr`` (shortest round-trip form).

Exit codes:

====  ==============================================================
0     success
1     ``verify`` found a check outside tolerance
2     malformed input file or config (message gives line and column)
3     degenerate residual column, or thresholds/predictions mismatch
4     usage error (including an oracle without its required inputs)
5     enumeration budget exceeded
====  ==============================================================

Results go to ``--out`` (or stdout); diagnostics and warnings go to stderr.
A JSON manifest is written next to ``--out`` as ``<out>.manifest.json``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .calibrators import METHODS, ORACLES, calibrate
from .errors import BudgetExceeded, DegenerateDimension, ShapeError
from .residuals import ModelOutput, invert_rectangle, jitter
from .simulation import ExperimentConfig, NoiseSpec, fit_ols, generate, run_experiment

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_DEGENERATE, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- CSV helpers

def read_table(text: str, prefixes: tuple[str, ...], source: str = "<input>"):
    """Parse a headed numeric CSV whose header cycles through ``prefixes``.

    ``prefixes=("e",)`` expects ``e1,e2,...``; ``("lo", "hi")`` expects
    ``lo1,hi1,lo2,hi2,...``. Returns ``(header, array)``.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise CliError(EXIT_INPUT, f"{source}: line 1, column 1: empty file")
    header = [h.strip() for h in rows[0]]
    k = len(prefixes)
    if not header or len(header) % k:
        raise CliError(EXIT_INPUT, f"{source}: line 1: expected {k} columns per dimension")
    for col, name in enumerate(header):
        want = f"{prefixes[col % k]}{col // k + 1}"
        if name != want:
            raise CliError(EXIT_INPUT, f"{source}: line 1, column {col + 1}: "
                                       f"expected header {want!r}, got {name!r}")
    data = []
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise CliError(EXIT_INPUT, f"{source}: line {line}: expected {len(header)} "
                                       f"fields, got {len(row)}")
        values = []
        for col, cell in enumerate(row, start=1):
            try:
                values.append(float(cell))
            except ValueError:
                raise CliError(EXIT_INPUT, f"{source}: line {line}, column {col}: "
                                           f"not a number: {cell!r}") from None
            if math.isnan(values[-1]):
                raise CliError(EXIT_INPUT, f"{source}: line {line}, column {col}: NaN")
        data.append(values)
    if not data:
        raise CliError(EXIT_INPUT, f"{source}: no data rows")
    return header, np.array(data, dtype=float)


def read_residuals(path: str) -> np.ndarray:
    _, e = read_table(_read(path), ("e",), path)
    bad = np.argwhere(~np.isfinite(e) | (e < 0))
    if bad.size:
        i, j = bad[0]
        raise CliError(EXIT_INPUT, f"{path}: line {i + 2}, column {j + 1}: residuals must "
                                   f"be finite and nonnegative, got {e[i, j]!r}")
    return e


def write_table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    return buf.getvalue()


def emit_thresholds(method: str, alpha: float, w) -> str:
    w = list(w)
    return write_table(["method", "alpha"] + [f"w{j + 1}" for j in range(len(w))],
                       [[method, fmt(alpha)] + [fmt(x) for x in w]])


def parse_thresholds(text: str, source: str = "<thresholds>"):
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows) != 2:
        raise CliError(EXIT_INPUT, f"{source}: expected a header and one data row")
    header, row = rows
    d = len(header) - 2
    want = ["method", "alpha"] + [f"w{j + 1}" for j in range(d)]
    if d < 1 or header != want:
        raise CliError(EXIT_INPUT, f"{source}: line 1: expected header {','.join(want)}")
    if len(row) != len(header):
        raise CliError(EXIT_INPUT, f"{source}: line 2: expected {len(header)} fields")
    values = []
    for col, cell in enumerate(row[1:], start=2):
        try:
            values.append(float(cell))
        except ValueError:
            raise CliError(EXIT_INPUT, f"{source}: line 2, column {col}: "
                                       f"not a number: {cell!r}") from None
    w = np.array(values[1:])
    if np.any(np.isnan(w)) or np.any(w < 0):
        raise CliError(EXIT_INPUT, f"{source}: line 2: thresholds must be nonnegative")
    return row[0], values[0], w


def emit_intervals(rects) -> str:
    d = rects[0].lower.size
    header = [f"{b}{j + 1}" for j in range(d) for b in ("l", "u")]
    rows = [[v for j in range(d) for v in (r.lower[j], r.upper[j])] for r in rects]
    return write_table(header, rows)


def parse_intervals(text: str):
    _, table = read_table(text, ("l", "u"), "<intervals>")
    return table[:, 0::2], table[:, 1::2]


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc.strerror}") from None


def _write(out: str | None, text: str) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _json_safe(x):
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return fmt(x) if not math.isfinite(x) else float(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def digest(obj) -> str:
    text = json.dumps(_json_safe(obj), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(out: str | None, manifest: dict) -> None:
    text = json.dumps(_json_safe(manifest), indent=2, sort_keys=True) + "\n"
    if out:
        Path(f"{out}.manifest.json").write_text(text)
    for w in manifest.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)


def resolve_seed(seed: int | None) -> int:
    """The given seed, or fresh OS entropy (to be echoed in the manifest)."""
    if seed is not None:
        return seed
    return int(np.random.SeedSequence().entropy)


def _floats(text: str, flag: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise CliError(EXIT_USAGE, f"{flag}: expected comma-separated numbers") from None


# ------------------------------------------------------------------ config

_CONFIG_FIELDS = {f.name for f in fields(ExperimentConfig)}


def load_config(path: str, seed: int | None = None) -> ExperimentConfig:
    """Flat TOML mirroring :class:`ExperimentConfig`; unknown keys are errors."""
    try:
        raw = tomllib.loads(_read(path))
    except tomllib.TOMLDecodeError as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}") from None
    unknown = sorted(set(raw) - _CONFIG_FIELDS)
    if unknown:
        raise CliError(EXIT_INPUT, f"{path}: unknown config key(s): {', '.join(unknown)}")
    for key, value in raw.items():
        if isinstance(value, dict):
            raise CliError(EXIT_INPUT, f"{path}: key {key!r}: nested tables are not allowed")
    if seed is not None:
        raw["seed"] = seed
    elif "seed" not in raw:
        raw["seed"] = resolve_seed(None)
    try:
        if "noise" in raw:
            raw["noise"] = NoiseSpec.parse(str(raw["noise"]))
        config = ExperimentConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}") from None
    unknown_methods = [m for m in config.methods if m not in METHODS and m not in ORACLES]
    if unknown_methods:
        raise CliError(EXIT_INPUT, f"{path}: unknown method(s): {', '.join(unknown_methods)}")
    if "trans-oracle" in config.methods:
        raise CliError(EXIT_INPUT, f"{path}: trans-oracle needs a single known test residual "
                                   "and cannot run in a benchmark")
    return config


# ---------------------------------------------------------------- commands

def cmd_calibrate(args) -> int:
    e = read_residuals(args.residuals)
    seed = resolve_seed(args.seed)
    warnings = []
    if args.jitter_scale is not None:
        e = jitter(e, args.jitter_scale, seed=seed).values
    options = {}
    if args.method == "split":
        options = {"split_fraction": args.split_fraction, "seed": seed}
    elif args.method == "trans-oracle":
        if args.test_residual is None:
            raise CliError(EXIT_USAGE, "trans-oracle requires --test-residual")
        options = {"test_residual": _floats(args.test_residual, "--test-residual")}
    elif args.method == "pop-oracle":
        if args.mu is None or args.sigma is None:
            raise CliError(EXIT_USAGE, "pop-oracle requires --mu and --sigma")
        options = {"mu_star": _floats(args.mu, "--mu"),
                   "sigma_star": _floats(args.sigma, "--sigma")}
    elif args.method == "tscp" and args.jobs:
        options = {"n_jobs": args.jobs}
    try:
        rect = calibrate(e, args.alpha, args.method, allow_oracles=True, **options)
    except DegenerateDimension as exc:
        raise CliError(EXIT_DEGENERATE, f"column e{exc.dimension + 1} has zero spread") from None
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None
    if rect.diagnostics.get("used_fallback"):
        warnings.append("gwc-fallback")
    if rect.diagnostics.get("exhausted"):
        warnings.append("zero-width dimensions: "
                        + ",".join(f"e{j + 1}" for j in rect.diagnostics["exhausted"]))
    if "raw_thresholds" in rect.diagnostics:
        warnings.append("negative thresholds clamped to 0")
    _write(args.out, emit_thresholds(rect.method, rect.alpha, rect.thresholds))
    write_manifest(args.out, {
        "command": "calibrate",
        "config_digest": digest({"residuals": hashlib.sha256(e.tobytes()).hexdigest(),
                                 "alpha": args.alpha, "method": args.method,
                                 "options": options, "jitter_scale": args.jitter_scale}),
        "seed": seed, "version": __version__,
        "thresholds": {rect.method: rect.thresholds},
        "diagnostics": {k: v for k, v in rect.diagnostics.items()},
        "warnings": warnings,
    })
    return EXIT_OK


def cmd_predict(args) -> int:
    method, alpha, w = parse_thresholds(_read(args.thresholds), args.thresholds)
    text = _read(args.predictions)
    first = text.split("\n", 1)[0].split(",")[0].strip()
    expected = "f1" if args.kind == "point" else "lo1"
    if first != expected:
        raise CliError(EXIT_DEGENERATE, f"{args.predictions}: header starts with {first!r}, "
                                        f"which does not match --kind {args.kind}")
    if args.kind == "point":
        _, f = read_table(text, ("f",), args.predictions)
        model = ModelOutput("point", point=f)
    else:
        _, t = read_table(text, ("lo", "hi"), args.predictions)
        if np.any(t[:, 0::2] > t[:, 1::2]):
            raise CliError(EXIT_INPUT, f"{args.predictions}: some lo exceeds its hi")
        model = ModelOutput("quantile", lo=t[:, 0::2], hi=t[:, 1::2], shift=args.shift)
    if model.shape[1] != w.size:
        raise CliError(EXIT_DEGENERATE, f"{w.size} thresholds but {model.shape[1]}-dimensional "
                                        "predictions")
    try:
        rects = invert_rectangle(w, model)
    except ShapeError as exc:
        raise CliError(EXIT_DEGENERATE, str(exc)) from None
    rects = rects if isinstance(rects, list) else [rects]
    _write(args.out, emit_intervals(rects))
    write_manifest(args.out, {
        "command": "predict", "version": __version__, "seed": None,
        "config_digest": digest({"thresholds": [method, alpha, w], "kind": args.kind,
                                 "shift": args.shift}),
        "thresholds": {method: w}, "warnings": [],
    })
    return EXIT_OK


def benchmark_report(report) -> str:
    cfg = report.config
    rows = []
    for method, s in report.summaries.items():
        rows.append([str(cfg.n_cal), str(cfg.d), str(cfg.noise), method,
                     s.coverage_mean, s.coverage_std, s.volume_mean, s.volume_std,
                     str(s.failures), str(s.fallbacks)])
    return write_table(["n", "d", "noise", "method", "coverage_mean", "coverage_std",
                        "volume_mean", "volume_std", "failures", "fallbacks"], rows)


def cmd_benchmark(args) -> int:
    config = load_config(args.config, args.seed)
    start = time.perf_counter()
    report = run_experiment(config, workers=args.workers)
    elapsed = time.perf_counter() - start
    _write(args.out, benchmark_report(report))
    warnings = []
    fallbacks = sum(s.fallbacks for s in report.summaries.values())
    if fallbacks:
        warnings.append(f"gwc-fallback in {fallbacks} repetition(s)")
    failures = {m: s.failures for m, s in report.summaries.items() if s.failures}
    if failures:
        warnings.append(f"method failures: {failures}")
    write_manifest(args.out, {
        "command": "benchmark", "version": __version__, "seed": config.seed,
        "config": config.to_dict(), "config_digest": digest(config.to_dict()),
        "thresholds": {}, "warnings": warnings,
        "wall_time_seconds": elapsed,
        "method_wall_time_mean": {m: s.wall_time_mean for m, s in report.summaries.items()},
    })
    return EXIT_OK


def cmd_verify(args) -> int:
    from .reference import verification_suite

    seed = resolve_seed(args.seed)
    try:
        results = verification_suite(seed=seed, instances=args.instances, budget=args.budget,
                                     tolerance=args.tolerance)
    except BudgetExceeded as exc:
        raise CliError(EXIT_BUDGET, str(exc)) from None
    rows = [[r.name, str(r.instances), r.max_deviation, r.tolerance,
             "pass" if r.passed else "FAIL"] for r in results]
    text = write_table(["check", "instances", "max_deviation", "tolerance", "status"], rows)
    for r in results:
        for f in r.failures:
            text += f"# {r.name}: {f}\n"
    _write(args.out, text)
    write_manifest(args.out, {
        "command": "verify", "version": __version__, "seed": seed,
        "config_digest": digest({"instances": args.instances, "budget": args.budget,
                                 "tolerance": args.tolerance}),
        "thresholds": {}, "warnings": [f"{r.name} failed" for r in results if not r.passed],
    })
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_simulate(args) -> int:
    config = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seq = np.random.SeedSequence(config.seed, spawn_key=(args.rep,))
    train, cal, test, xi = generate(config, seq)
    model = fit_ols(train)
    for name, part in (("train", train), ("cal", cal), ("test", test)):
        header = [f"x{i + 1}" for i in range(config.d_x)] + [f"y{j + 1}" for j in range(config.d)]
        (out / f"{name}.csv").write_text(write_table(header, np.hstack([part.x, part.y])))
    cal_res = np.abs(cal.y - model.predict(cal.x).point)
    (out / "cal_residuals.csv").write_text(
        write_table([f"e{j + 1}" for j in range(config.d)], cal_res))
    (out / "test_predictions.csv").write_text(
        write_table([f"f{j + 1}" for j in range(config.d)], model.predict(test.x).point))
    write_manifest(str(out / "simulate"), {
        "command": "simulate", "version": __version__, "seed": config.seed, "rep": args.rep,
        "config": config.to_dict(), "config_digest": digest(config.to_dict()),
        "xi": xi, "thresholds": {}, "warnings": [],
    })
    return EXIT_OK


# ------------------------------------------------------------------ parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tscp", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("calibrate", help="residuals CSV -> thresholds CSV")
    c.add_argument("residuals")
    c.add_argument("--alpha", type=float, default=0.1)
    c.add_argument("--method", default="tscp", choices=sorted(METHODS) + sorted(ORACLES))
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.add_argument("--test-residual", help="comma-separated test residual (trans-oracle)")
    c.add_argument("--mu", help="comma-separated true residual means (pop-oracle)")
    c.add_argument("--sigma", help="comma-separated true residual stds (pop-oracle)")
    c.add_argument("--split-fraction", type=float, default=0.5)
    c.add_argument("--jitter-scale", type=float)
    c.add_argument("--jobs", type=int, help="threads for the tscp per-dimension searches")
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("predict", help="thresholds + predictions -> intervals CSV")
    r.add_argument("thresholds")
    r.add_argument("predictions")
    r.add_argument("--kind", choices=("point", "quantile"), default="point")
    r.add_argument("--shift", type=float, default=0.0,
                   help="constant added to quantile residuals at calibration")
    r.add_argument("--out")
    r.set_defaults(func=cmd_predict)

    b = sub.add_parser("benchmark", help="Monte Carlo coverage/volume table")
    b.add_argument("--config", required=True)
    b.add_argument("--seed", type=int)
    b.add_argument("--out")
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(func=cmd_benchmark)

    v = sub.add_parser("verify", help="cross-check closed forms against slow oracles")
    v.add_argument("--budget", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--instances", type=int, default=200)
    v.add_argument("--tolerance", type=float, help="override every check's tolerance")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", help="write one generated dataset as CSV files")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--rep", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"tscp {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
