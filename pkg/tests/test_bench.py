import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from ronchicalib import bench
from ronchicalib.bench import BenchmarkConfig
from ronchicalib.errors import ConfigError


def small(**kw):
    base = dict(runs=4, horizon=6, workers=1, scenario="mismatch-0.1")
    base.update(kw)
    return BenchmarkConfig(**base)


@pytest.fixture(scope="module")
def small_result():
    return bench.run_benchmark(small())


def medians(result, method="full"):
    return bench.quantile_curves(result.errors[method])[:, 0]


def test_single_noiseless_run_converges():
    cfg = BenchmarkConfig(runs=1, horizon=10, workers=1, scenario="exact-prior",
                          methods=("full",), testbed={"noise_std": 1e-4},
                          em={"n_candidates": 1024, "perturb_sigma": 5.0})
    res = bench.run_benchmark(cfg)
    assert res.errors["full"][0, -1] < 1.0


def test_median_trend_non_increasing(mismatch_benchmark):
    # one-step slack: any rise after step 5 is undone by the following step
    med = medians(mismatch_benchmark)
    for t in range(5, len(med) - 2):
        assert med[t + 2] <= med[t], (t, med[t:t + 3])


def test_exact_prior_baseline_matches_full(exact_benchmark):
    full = medians(exact_benchmark)[-1]
    fixed = medians(exact_benchmark, "fixed-prior")[-1]
    assert 0.8 <= full / fixed <= 1.25


def test_methods_share_trace_shape(small_result):
    shapes = {m: e.shape for m, e in small_result.errors.items()}
    assert set(shapes.values()) == {(4, 7)}
    assert not any(small_result.failures.values())


def test_common_random_numbers(small_result):
    # every method starts from the same truth and the same first observation
    errs = np.stack([small_result.errors[m][:, 0] for m in ("full", "hard-em")])
    assert np.all(np.isfinite(errs))
    assert np.array_equal(small_result.x0, bench.run_benchmark(small()).x0)


def test_worker_count_does_not_change_results(small_result):
    par = bench.run_benchmark(small(workers=2))
    for m in small_result.methods:
        assert np.array_equal(par.errors[m], small_result.errors[m])


def test_quantiles_match_sort_oracle():
    rng = np.random.default_rng(0)
    E = rng.lognormal(size=(21, 5))
    E[3] = np.nan
    q = bench.quantile_curves(E)
    ok = np.sort(np.delete(E, 3, axis=0), axis=0)
    # 20 runs: linear interpolation between order statistics
    np.testing.assert_allclose(q[:, 0], 0.5 * (ok[9] + ok[10]), rtol=1e-14)
    np.testing.assert_allclose(q[:, 1], ok[4] + 0.75 * (ok[5] - ok[4]), rtol=1e-14)
    np.testing.assert_allclose(q[:, 2], ok[14] + 0.25 * (ok[15] - ok[14]), rtol=1e-14)


def test_emit_layout_and_round_trip(small_result, tmp_path):
    bench.emit_results(small_result, tmp_path)
    with open(tmp_path / "curves.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == bench.curves_header(small_result.methods)
    assert rows[0][:4] == ["step", "full_median", "full_q25", "full_q75"]
    assert all(len(r) == 3 * len(small_result.methods) + 1 for r in rows)
    back = bench.read_curves(tmp_path / "curves.csv")
    for m in small_result.methods:
        assert np.array_equal(back[m], bench.quantile_curves(small_result.errors[m]))
    with open(tmp_path / "runs.csv", newline="") as fh:
        runs = list(csv.reader(fh))
    assert runs[0] == ["run", "step", "method", "error"]
    assert len(runs) == 1 + 4 * 7 * 3
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["runs"] == 4
    svg = tmp_path / "curves_mismatch-0.1.svg"
    assert svg.stat().st_size > 0
    assert ET.parse(svg).getroot().tag.endswith("svg")


def test_emit_is_deterministic(small_result, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    bench.emit_results(small_result, a)
    bench.emit_results(bench.run_benchmark(small()), b)
    for name in ("curves.csv", "runs.csv", "curves_mismatch-0.1.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


@pytest.mark.parametrize("kw", [dict(runs=0), dict(horizon=0), dict(source="camera"),
                                dict(methods=("full", "magic")), dict(source="wave")])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        small(**kw)


def test_failed_runs_are_recorded(monkeypatch):
    from ronchicalib import em
    from ronchicalib.errors import DegenerateWeightsError

    real = em.run_calibration

    def flaky(source, model, config, rng, **kw):
        if config.hard:
            raise DegenerateWeightsError("forced")
        return real(source, model, config, rng, **kw)

    monkeypatch.setattr(em, "run_calibration", flaky)
    res = bench.run_benchmark(small(runs=2))
    assert res.failures["hard-em"] == [0, 1]
    assert np.all(np.isnan(res.errors["hard-em"]))
    assert np.all(np.isnan(bench.quantile_curves(res.errors["hard-em"])))
    assert not res.failures["full"]
