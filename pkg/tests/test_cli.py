import json
import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _instances import heavy_outlier_instance
from tscp.cli import (EXIT_BUDGET, EXIT_DEGENERATE, EXIT_INPUT, EXIT_OK, EXIT_USAGE,
                      EXIT_VERIFY, emit_intervals, emit_thresholds, main, parse_intervals,
                      parse_thresholds, write_table)
from tscp.residuals import OutcomeRectangle

TINY_CONFIG = """d_x = 3
d = 2
n_train = 40
n_cal = 15
n_test = 20
repetitions = 1
seed = 3
"""


def residual_file(tmp_path, e, name="res.csv"):
    path = tmp_path / name
    path.write_text(write_table([f"e{j + 1}" for j in range(e.shape[1])], e))
    return str(path)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def manifest(path):
    return json.loads((path.parent / f"{path.name}.manifest.json").read_text())


def test_single_column_bonferroni_matches_unscaled_max(tmp_path, capsys, rng):
    path = residual_file(tmp_path, rng.exponential(size=(30, 1)))
    outs = []
    for method in ("bonferroni", "unscaled-max"):
        code, out, _ = run(capsys, "calibrate", path, "--alpha", 0.1, "--method", method)
        assert code == EXIT_OK
        outs.append(parse_thresholds(out)[2])
    np.testing.assert_array_equal(*outs)


def test_fallback_instance_warns_in_manifest(tmp_path, capsys):
    e = heavy_outlier_instance(np.random.default_rng(0), 50, 1)
    out = tmp_path / "w.csv"
    code, _, err = run(capsys, "calibrate", residual_file(tmp_path, e), "--method", "tscp",
                       "--out", out)
    assert code == EXIT_OK
    m = manifest(out)
    assert "gwc-fallback" in m["warnings"]
    assert m["diagnostics"]["used_fallback"] is True
    assert "gwc-fallback" in err


def test_manifest_fields(tmp_path, capsys, rng):
    out = tmp_path / "w.csv"
    run(capsys, "calibrate", residual_file(tmp_path, rng.exponential(size=(20, 2))),
        "--method", "split", "--seed", 11, "--out", out)
    m = manifest(out)
    assert m["command"] == "calibrate" and m["seed"] == 11 and m["version"]
    assert len(m["config_digest"]) == 64
    assert list(m["thresholds"]) == ["split"]


def test_missing_seed_is_recorded(tmp_path, capsys, rng):
    out = tmp_path / "w.csv"
    run(capsys, "calibrate", residual_file(tmp_path, rng.exponential(size=(20, 2))),
        "--method", "split", "--out", out)
    assert isinstance(manifest(out)["seed"], int)


def test_trans_oracle_needs_test_residual(tmp_path, capsys, rng):
    path = residual_file(tmp_path, rng.exponential(size=(20, 2)))
    code, out, _ = run(capsys, "calibrate", path, "--method", "trans-oracle")
    assert code == EXIT_USAGE and out == ""
    code, out, _ = run(capsys, "calibrate", path, "--method", "trans-oracle",
                       "--test-residual", "1.0,2.0")
    assert code == EXIT_OK and parse_thresholds(out)[0] == "trans-oracle"


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["calibrate", "x.csv", "--bogus"])
    assert exc.value.code == EXIT_USAGE


@pytest.mark.parametrize("body, where", [("e1,e2\n1.0,2.0\n3.0,oops\n", "line 3, column 2"),
                                         ("e1,e3\n1.0,2.0\n", "line 1, column 2"),
                                         ("e1,e2\n1.0,2.0\n1.0\n", "line 3"),
                                         ("e1\n-1.0\n", "line 2, column 1")])
def test_malformed_csv(tmp_path, capsys, body, where):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    code, out, err = run(capsys, "calibrate", path, "--method", "gwc")
    assert code == EXIT_INPUT and out == ""
    assert where in err


def test_degenerate_column_names_it(tmp_path, capsys, rng):
    e = np.column_stack([rng.exponential(size=10), np.full(10, 2.0)])
    code, _, err = run(capsys, "calibrate", residual_file(tmp_path, e), "--method", "tscp")
    assert code == EXIT_DEGENERATE and "e2" in err


def thresholds_file(tmp_path, w):
    path = tmp_path / "w.csv"
    path.write_text(emit_thresholds("tscp", 0.1, w))
    return str(path)


def test_zero_thresholds_give_degenerate_intervals(tmp_path, capsys):
    preds = tmp_path / "f.csv"
    f = np.array([[1.5, -2.0], [0.25, 3.0]])
    preds.write_text(write_table(["f1", "f2"], f))
    code, out, _ = run(capsys, "predict", thresholds_file(tmp_path, [0.0, 0.0]), preds)
    assert code == EXIT_OK
    lo, hi = parse_intervals(out)
    np.testing.assert_array_equal(lo, f)
    np.testing.assert_array_equal(hi, f)
    # two test rows, each with a pair of intervals
    assert out.splitlines()[0] == "l1,u1,l2,u2" and len(out.splitlines()) == 3


def test_infinite_threshold_gives_whole_line(tmp_path, capsys):
    preds = tmp_path / "f.csv"
    preds.write_text("f1,f2\n1.0,2.0\n")
    code, out, _ = run(capsys, "predict", thresholds_file(tmp_path, [math.inf, 1.0]), preds)
    assert code == EXIT_OK
    assert out.splitlines()[1].startswith("-inf,inf,")


def test_quantile_predictions(tmp_path, capsys):
    preds = tmp_path / "q.csv"
    preds.write_text("lo1,hi1\n0.0,4.0\n")
    code, out, _ = run(capsys, "predict", thresholds_file(tmp_path, [1.0]), preds,
                       "--kind", "quantile")
    assert code == EXIT_OK
    lo, hi = parse_intervals(out)
    assert (lo[0, 0], hi[0, 0]) == (-1.0, 5.0)


def test_kind_and_dimension_mismatch(tmp_path, capsys):
    preds = tmp_path / "f.csv"
    preds.write_text("f1,f2\n1.0,2.0\n")
    code, _, _ = run(capsys, "predict", thresholds_file(tmp_path, [1.0, 1.0]), preds,
                     "--kind", "quantile")
    assert code == EXIT_DEGENERATE
    code, _, _ = run(capsys, "predict", thresholds_file(tmp_path, [1.0, 1.0, 1.0]), preds)
    assert code == EXIT_DEGENERATE


finite_or_inf = st.one_of(st.floats(0, 1e300, allow_nan=False), st.just(math.inf))


@given(st.lists(finite_or_inf, min_size=1, max_size=6), st.floats(1e-6, 0.999))
def test_thresholds_round_trip(w, alpha):
    method, a, back = parse_thresholds(emit_thresholds("gwc", alpha, w))
    assert method == "gwc" and a == alpha
    assert back.tolist() == w


@given(st.lists(st.lists(st.floats(-1e300, 1e300), min_size=2, max_size=2), min_size=1,
                max_size=4),
       st.lists(finite_or_inf, min_size=2, max_size=2))
def test_intervals_round_trip(centers, half):
    rects = [OutcomeRectangle(np.array(c) - half, np.array(c) + half) for c in centers]
    lo, hi = parse_intervals(emit_intervals(rects))
    np.testing.assert_array_equal(lo, [r.lower for r in rects])
    np.testing.assert_array_equal(hi, [r.upper for r in rects])


def test_benchmark_smoke_is_fast_and_deterministic(tmp_path, capsys):
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(TINY_CONFIG)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    start = time.perf_counter()
    code, _, _ = run(capsys, "benchmark", "--config", cfg, "--out", a)
    assert time.perf_counter() - start < 1.0
    assert code == EXIT_OK
    run(capsys, "benchmark", "--config", cfg, "--out", b)
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0].startswith("n,d,noise,method,coverage_mean")
    assert len(lines) == 7
    assert all("" not in line.split(",") for line in lines)


@pytest.mark.parametrize("body", ["d = 2\nbogus = 1\n", "d = \n", "[table]\nd = 2\n",
                                  "methods = ['copula']\n", "methods = ['trans-oracle']\n",
                                  "n_cal = 0\n"])
def test_config_errors(tmp_path, capsys, body):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(body)
    code, out, _ = run(capsys, "benchmark", "--config", cfg)
    assert code == EXIT_INPUT and out == ""


def test_verify_budget(capsys):
    code, out, _ = run(capsys, "verify", "--budget", 10, "--instances", 5)
    assert code == EXIT_BUDGET and out == ""


def test_verify_passes_with_defaults(capsys):
    code, out, _ = run(capsys, "verify", "--instances", 20)
    assert code == EXIT_OK
    assert [line.split(",")[-1] for line in out.splitlines()[1:]] == ["pass"] * 4


def test_verify_strict_tolerance_reports_locations(capsys):
    code, out, err = run(capsys, "verify", "--instances", 20, "--tolerance", 1e-15)
    assert code == EXIT_VERIFY
    assert any(line.startswith("# ") and "instance " in line for line in out.splitlines())
    # stderr carries only warnings, no numbers from the report
    assert all(line.startswith("warning: ") and line.endswith("failed")
               for line in err.splitlines())


def test_simulate_writes_pipeline_inputs(tmp_path, capsys):
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(TINY_CONFIG)
    out = tmp_path / "sim"
    code, _, _ = run(capsys, "simulate", "--config", cfg, "--out", out)
    assert code == EXIT_OK
    for name in ("train", "cal", "test", "cal_residuals", "test_predictions"):
        assert (out / f"{name}.csv").exists()
    code, w, _ = run(capsys, "calibrate", out / "cal_residuals.csv", "--method", "tscp")
    assert code == EXIT_OK
    (tmp_path / "w.csv").write_text(w)
    code, intervals, _ = run(capsys, "predict", tmp_path / "w.csv", out / "test_predictions.csv")
    assert code == EXIT_OK and len(intervals.splitlines()) == 21
