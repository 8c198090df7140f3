import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ronchicalib import _pykernels, kernels

compiled = pytest.mark.skipif("compiled" not in kernels.available_backends(),
                              reason="compiled extension not built")


def batch(rng, B, M, n):
    return rng.uniform(-200, 200, (B, M, n))


@compiled
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 9), st.integers(1, 3))
def test_gram_backends_agree(seed, B, M, n):
    from ronchicalib import _ckernels
    rng = np.random.default_rng(seed)
    X, Y = batch(rng, B, M, n), batch(rng, B, M + 1, n)
    inv = 1.0 / rng.uniform(20, 200, n) ** 2
    a = _ckernels.sym_se_gram(X, Y, 1.7, inv)
    b = _pykernels.sym_se_gram(X, Y, 1.7, inv)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


@compiled
@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 3))
def test_factor_backends_agree(seed, M, ell):
    from ronchicalib import _ckernels
    rng = np.random.default_rng(seed)
    X = batch(rng, 3, M, 3)
    K = _pykernels.sym_se_gram(X, X, 1.0, np.full(3, 1 / 80.0**2))
    D = rng.standard_normal((3, M, ell))
    noise = rng.uniform(1e-4, 1e-1, ell)
    a = _ckernels.factor_solve(K, D, noise, 1.0, True)
    b = _pykernels.factor_solve(K, D, noise, 1.0, True)
    for x, y in zip(a[:4], b[:4]):
        np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-10)
    assert a[5] == b[5] == -1


def test_gram_is_symmetric_and_even():
    rng = np.random.default_rng(0)
    X = rng.uniform(-100, 100, (6, 3))
    K = kernels.sym_se_gram(X, X, 2.0, np.full(3, 1e-3))
    assert np.array_equal(K, K.T)
    assert np.array_equal(K, kernels.sym_se_gram(-X, X, 2.0, np.full(3, 1e-3)))
    assert np.all(np.linalg.eigvalsh(K) > -1e-10)


def test_backend_switch_round_trip():
    prev = kernels.use_backend("python")
    try:
        assert kernels.BACKEND == "python"
    finally:
        kernels.use_backend(prev)
    with pytest.raises(ValueError):
        kernels.use_backend("gpu")


def test_factorization_counter():
    kernels.factorizations.reset()
    K = np.tile(np.eye(3), (5, 1, 1))
    kernels.factor_solve(K, np.zeros((5, 3, 1)), np.array([0.1]), 1.0)
    assert kernels.factorizations.count == 5


def test_jitter_recovers_slightly_indefinite_gram():
    K = (np.ones((3, 3)) - 1e-9 * np.eye(3))[None]
    res = kernels.factor_solve(K, np.ones((1, 3, 1)), np.array([1e-14]), 1.0)
    assert res["jitter"][0] > 0
    assert np.all(np.isfinite(res["logdet"]))


@pytest.mark.parametrize("value,expected", [("python", "python"), ("bogus", None)])
def test_backend_env_var(value, expected):
    import os
    import subprocess
    import sys
    env = dict(os.environ, RONCHICALIB_BACKEND=value)
    r = subprocess.run([sys.executable, "-c", "from ronchicalib import kernels; print(kernels.BACKEND)"],
                       env=env, capture_output=True, text=True)
    if expected is None:
        assert r.returncode != 0 and "RONCHICALIB_BACKEND" in r.stderr
    else:
        assert r.stdout.strip() == expected
