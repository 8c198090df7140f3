import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ronchicalib import optics
from ronchicalib.errors import ConfigError, SimulationError, UnsupportedAberrationOrder
from ronchicalib.preprocess import preprocess

coeff = st.floats(-200, 200, allow_nan=False)
state3 = st.tuples(coeff, coeff, coeff)


def test_zero_state_has_zero_phase():
    chi = optics.aberration_phase((0, 0, 0), 64, 2e-3, k_nyquist=12.0)
    assert np.all(chi == 0)


@given(state3)
def test_phase_is_odd_in_state(x):
    a = optics.aberration_phase(x, 32, 2e-3, k_nyquist=12.0)
    b = optics.aberration_phase(tuple(-v for v in x), 32, 2e-3, k_nyquist=12.0)
    np.testing.assert_array_equal(a, -b)


def test_defocus_phase_scalar_oracle():
    side, kn, lam = 64, 12.0, 2e-3
    chi = optics.aberration_phase((100, 0, 0), side, lam, k_nyquist=kn)
    # kx = k_N / 4 sits side / 8 columns right of the centre, ky = 0 on the centre row
    got = chi[side // 2, side // 2 + side // 8]
    k = kn / 4
    assert got == pytest.approx(np.pi * lam * 100 * k * k, rel=1e-12)


def test_astigmatism_sign_convention():
    side, kn = 32, 12.0
    kx, ky = optics.frequency_grid(side, kn)
    chi = optics.aberration_phase((0, 0, 50), side, 2e-3, k_nyquist=kn)
    np.testing.assert_allclose(chi, np.pi * 2e-3 * 2 * 50 * kx * ky)


def test_unsupported_order():
    with pytest.raises(UnsupportedAberrationOrder):
        optics.aberration_phase((1.0, 2.0), 32, 2e-3)


@pytest.mark.parametrize("kw", [dict(side=48), dict(side=16), dict(dose=0.0),
                                dict(aperture_semiangle=1.5), dict(mode="ray")])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        optics.SimConfig(**kw)


def test_state_rejects_nonfinite():
    with pytest.raises(ConfigError):
        optics.AberrationState((1.0, np.nan, 0.0))


@pytest.mark.parametrize("mode", optics.MODES)
def test_expected_image_deterministic(mode):
    cfg = optics.SimConfig(mode=mode)
    a = optics.expected_image((40, -20, 10), cfg)
    b = optics.expected_image((40, -20, 10), cfg)
    assert np.array_equal(a, b)
    assert np.all(a > 0)


@pytest.mark.parametrize("mode", optics.MODES)
def test_aperture_sum_oracle(mode):
    cfg = optics.SimConfig(mode=mode)
    g = optics.expected_image((120, -60, 30), cfg)
    mask = optics.aperture_mask(cfg.side, cfg.aperture_semiangle)
    target = cfg.dose * mask.sum()
    assert abs(g[mask].sum() - target) / target < 0.01


def test_wave_image_not_even():
    cfg = optics.SimConfig()
    a = optics.expected_image((150, 80, 0), cfg)
    b = optics.expected_image((-150, -80, 0), cfg)
    assert np.linalg.norm(a - b) / np.linalg.norm(a) > 0.01


@given(state3)
def test_analytic_spectrum_exactly_even(x):
    cfg = optics.SimConfig(mode="analytic_even", side=32)
    a = optics.expected_spectrum(x, cfg)
    b = optics.expected_spectrum(tuple(-v for v in x), cfg)
    assert np.array_equal(a, b)
    assert np.array_equal(optics.expected_image(x, cfg), optics.expected_image(tuple(-v for v in x), cfg))


def test_phase_screen_frozen_per_seed():
    assert np.array_equal(optics.phase_screen(32, 3), optics.phase_screen(32, 3))
    assert not np.array_equal(optics.phase_screen(32, 3), optics.phase_screen(32, 4))


def test_tiny_rate_gives_zero_counts():
    y = optics.sample_ronchigram(np.full((32, 32), 1e-12), 0)
    assert y.counts.sum() == 0


def test_poisson_moments():
    rng = np.random.default_rng(1)
    lam = np.array([[0.5, 3.0], [100.0, 20.0]])
    draws = np.stack([optics.sample_ronchigram(lam, rng).counts for _ in range(10_000)]).astype(float)
    mean = draws.mean(axis=0)
    assert np.all(np.abs(mean - lam) < 5 * np.sqrt(lam) / 100)
    ratio = draws[:, 1, 0].var() / draws[:, 1, 0].mean()
    assert 0.9 <= ratio <= 1.1


@pytest.mark.parametrize("bad", [np.nan, np.inf, -1.0])
def test_bad_rates_raise(bad):
    lam = np.ones((4, 4))
    lam[1, 2] = bad
    with pytest.raises(SimulationError):
        optics.sample_ronchigram(lam, 0)


def test_sampling_reproducible():
    cfg = optics.SimConfig()
    a = optics.simulate((10, 20, 30), cfg, 5)
    b = optics.simulate((10, 20, 30), cfg, 5)
    assert np.array_equal(a.counts, b.counts)
    assert a.counts.dtype == np.uint32
    assert a.state_tag.coeffs == (10.0, 20.0, 30.0)


@pytest.mark.parametrize("kind", ["counts", "spectrum"])
def test_dataset_round_trip(tmp_path, kind):
    cfg = optics.SimConfig(side=32, mode="analytic_even", dose=50.0)
    states = [(1.0, 2.0, 3.0), (-5.0, 0.5, 9.0)]
    grams = [optics.simulate(x, cfg, i) for i, x in enumerate(states)]
    grids = [preprocess(g).values for g in grams] if kind == "spectrum" else None
    optics.save_dataset(tmp_path, grams, [0, 1], cfg, kind=kind, grids=grids)
    loaded, got_states, seeds, got_cfg, got_kind = optics.load_dataset(tmp_path)
    assert got_kind == kind and got_cfg == cfg and list(seeds) == [0, 1]
    np.testing.assert_array_equal(got_states, np.array(states))
    if kind == "counts":
        assert np.array_equal(loaded, np.stack([g.counts for g in grams]))
    else:
        np.testing.assert_array_equal(loaded, np.stack(grids).astype(np.float32))


def test_counts_file_layout(tmp_path):
    cfg = optics.SimConfig(side=32, mode="analytic_even")
    g = optics.simulate((0, 0, 0), cfg, 0)
    optics.save_dataset(tmp_path, [g], [0], cfg)
    raw = (tmp_path / "counts_00000.bin").read_bytes()
    assert len(raw) == 4 * 32 * 32
    assert np.array_equal(np.frombuffer(raw, dtype="<u4").reshape(32, 32), g.counts)
