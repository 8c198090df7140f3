import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ronchicalib import encoder, optics, pipeline
from ronchicalib.basis import BasisSet, LinearMap
from ronchicalib.gp import GPModel, KernelConfig

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def wave_corpus():
    """400 noisy wave-mode spectra with their states."""
    rng = np.random.default_rng(0)
    states = pipeline.sample_states(400, 3, 200.0, rng)
    spectra = pipeline.simulate_corpus(states, optics.SimConfig(), rng)
    return states, spectra


@pytest.fixture(scope="session")
def trained_vae(wave_corpus):
    _, spectra = wave_corpus
    params, elbo_log = encoder.train_vae(spectra, encoder.TrainConfig())
    return params, elbo_log


def analytic_model(n=2, ell=2, m=6, width=60.0, noise=1e-8, sf2=0.05, lengthscale=80.0, seed=0):
    """GP model whose prior mean is a known even map, plus that map."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-150, 150, size=(m, n))
    f = LinearMap(BasisSet("sym_gauss", centers, width, extent=250.0), rng.standard_normal((ell, m)))
    kernel = KernelConfig(sf2, np.full(n, lengthscale), np.full(ell, noise))
    return GPModel(kernel, f, ell), f


def _benchmark(scenario):
    """100-run benchmark plus its wall time in seconds."""
    import time

    from ronchicalib import bench
    t0 = time.perf_counter()
    result = bench.run_benchmark(bench.BenchmarkConfig(runs=100, horizon=30, scenario=scenario))
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def mismatch_benchmark_timed():
    """Full-size Monte-Carlo comparison on the 30% mismatch scenario."""
    return _benchmark("mismatch-0.3")


@pytest.fixture(scope="session")
def exact_benchmark_timed():
    return _benchmark("exact-prior")


@pytest.fixture(scope="session")
def mismatch_benchmark(mismatch_benchmark_timed):
    return mismatch_benchmark_timed[0]


@pytest.fixture(scope="session")
def exact_benchmark(exact_benchmark_timed):
    return exact_benchmark_timed[0]


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
