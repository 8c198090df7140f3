import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ronchicalib import testbed
from ronchicalib.errors import ConfigError
from ronchicalib.testbed import SyntheticMap, probe_grid, signal_scale


def noiseless(name="exact-prior"):
    return testbed.make_scenario(name, noise_std=0.0)


def test_zero_noise_is_exact_and_even():
    smap, _ = noiseless()
    rng = np.random.default_rng(0)
    for x in rng.uniform(-200, 200, (10, 3)):
        y = testbed.sample_latent(smap, x, rng)
        assert np.array_equal(y, smap.truth(x[None])[0])
        assert np.array_equal(y, testbed.sample_latent(smap, -x, rng))


def test_sample_mean_moment():
    smap, _ = testbed.make_scenario("mismatch-0.3", noise_std=0.05)
    rng = np.random.default_rng(1)
    x = np.array([40.0, -120.0, 75.0])
    draws = np.stack([testbed.sample_latent(smap, x, rng) for _ in range(10_000)])
    sigma = np.sqrt(smap.noise_variance)
    gap = np.abs(draws.mean(axis=0) - smap.expected(x)[0])
    assert np.all(gap < 5 * sigma / 100)


def test_fixed_seed_reproducible():
    smap, _ = testbed.make_scenario("mismatch-0.1")
    a = testbed.sample_latent(smap, np.ones(3), np.random.default_rng(7))
    b = testbed.sample_latent(smap, np.ones(3), np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_exact_prior_mean_is_truth():
    smap, model = testbed.make_scenario("exact-prior")
    P = probe_grid(3)
    assert np.max(np.abs(model.mean(P) - smap.expected(P))) < 1e-10


@pytest.mark.parametrize("name,eps", [("mismatch-0.1", 0.1), ("mismatch-0.3", 0.3),
                                      ("wrong-lengthscale", 0.3)])
def test_mismatch_magnitude(name, eps):
    smap, model = testbed.make_scenario(name)
    P = probe_grid(3)
    scale = signal_scale(smap.truth, P)
    gap = np.max(np.abs(model.mean(P) - smap.expected(P))) / scale
    assert abs(gap - eps) <= 0.2 * eps
    if name == "mismatch-0.3":
        assert 0.25 <= gap <= 0.35


def test_signal_scale_normalized():
    smap, _ = testbed.make_scenario("exact-prior")
    assert signal_scale(smap.truth, probe_grid(3)) == pytest.approx(1.0, rel=1e-12)


def test_scenario_list_stable():
    assert testbed.scenario_names() == ["exact-prior", "mismatch-0.1", "mismatch-0.3",
                                        "wrong-lengthscale"]
    assert testbed.scenario_names() == testbed.scenario_names()


def test_unknown_scenario_and_bad_override():
    with pytest.raises(ConfigError):
        testbed.make_scenario("nope")
    with pytest.raises(ConfigError):
        testbed.make_scenario("exact-prior", colour="blue")


def test_negative_noise_rejected():
    smap, _ = testbed.make_scenario("exact-prior")
    with pytest.raises(ConfigError):
        SyntheticMap(smap.truth, -1.0)


def test_scenario_build_deterministic():
    a, ma = testbed.make_scenario("mismatch-0.3")
    b, mb = testbed.make_scenario("mismatch-0.3")
    P = probe_grid(3, per_axis=5)
    assert np.array_equal(a.expected(P), b.expected(P))
    assert np.array_equal(ma.mean(P), mb.mean(P))


@given(st.sampled_from(testbed.scenario_names()), st.integers(1, 3), st.integers(0, 10_000))
def test_truth_and_mismatch_even(name, n, seed):
    smap, model = testbed.make_scenario(name, n=n, noise_std=0.0)
    X = np.random.default_rng(seed).uniform(-250, 250, (8, n))
    assert np.array_equal(smap.expected(X), smap.expected(-X))
    assert np.array_equal(model.mean(X), model.mean(-X))


def test_source_observes_shifted_state():
    smap, _ = noiseless()
    x0 = np.array([10.0, 20.0, -30.0])
    src = testbed.TestbedSource(smap, x0, np.random.default_rng(0))
    s = np.array([5.0, -5.0, 1.0])
    assert np.array_equal(src.observe(s), smap.truth((x0 + s)[None])[0])
