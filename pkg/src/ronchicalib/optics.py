"""Thin-sample Ronchigram simulator.

Two generators share one centred frequency lattice (DC at index side/2):

* ``wave``: probe = IFFT{A(k) exp(-i chi(k))} over a weak phase screen,
  detector intensity |FFT{probe * t}|^2;
* ``analytic_even``: the expected power spectrum is written down directly
  as dose (B(q) sin chi(q))^2 + floor, which is exactly even in the
  aberrations, and a spatial image with that spectrum is synthesized.
"""

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import gridio
from .errors import ConfigError, PersistenceError, SimulationError, UnsupportedAberrationOrder

MODES = ("wave", "analytic_even")
COEFF_NAMES = ("C1", "A1x", "A1y")
SCREEN_STRENGTH = 0.2
SCREEN_SMOOTHING = 2.0  # pixels
FLOOR_FRACTION = 1e-3


@dataclass(frozen=True)
class AberrationState:
    """Aberration coefficients in nm, ordered (C1, A1x, A1y) for n = 3."""

    coeffs: tuple

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 1 or c.size < 1 or not np.all(np.isfinite(c)):
            raise ConfigError("aberration state must be a finite, non-empty vector")
        object.__setattr__(self, "coeffs", tuple(float(v) for v in c))

    @property
    def n(self):
        return len(self.coeffs)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coeffs, dtype=dtype)

    def __neg__(self):
        return AberrationState(tuple(-v for v in self.coeffs))


def as_state(x):
    return x if isinstance(x, AberrationState) else AberrationState(x)


@dataclass(frozen=True)
class SimConfig:
    side: int = 64
    wavelength: float = 2e-3  # nm
    aperture_semiangle: float = 1.0  # fraction of Nyquist
    dose: float = 1e4  # mean electrons per in-aperture pixel
    phase_screen_seed: int = 0
    mode: str = "wave"
    k_nyquist: float = 12.0  # nm^-1, edge of the frequency lattice

    def __post_init__(self):
        s = self.side
        if not (isinstance(s, (int, np.integer)) and s >= 32 and s & (s - 1) == 0):
            raise ConfigError(f"side must be a power of two >= 32, got {s}")
        if not self.dose > 0:
            raise ConfigError("dose must be positive")
        if not 0 < self.aperture_semiangle <= 1:
            raise ConfigError("aperture_semiangle must lie in (0, 1]")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not (self.wavelength > 0 and self.k_nyquist > 0):
            raise ConfigError("wavelength and k_nyquist must be positive")

    def as_dict(self):
        return asdict(self)


@dataclass
class Ronchigram:
    counts: np.ndarray
    state_tag: AberrationState = None

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or np.any(c < 0):
            raise SimulationError("Ronchigram counts must be a non-negative 2-D grid")
        self.counts = c

    @property
    def side(self):
        return self.counts.shape[0]


def frequency_grid(side, k_nyquist):
    """Centred lattice: returns (kx, ky) with kx varying along columns."""
    k = (np.arange(side) - side // 2) * (k_nyquist / (side // 2))
    return np.meshgrid(k, k, indexing="xy")


def aperture_mask(side, aperture, k_nyquist=1.0):
    kx, ky = frequency_grid(side, k_nyquist)
    return np.hypot(kx, ky) <= aperture * k_nyquist


def aberration_phase(state, side, wavelength, aperture=1.0, k_nyquist=4.0):
    """chi(k) = pi lambda [C1 |k|^2 + A1x (kx^2 - ky^2) + 2 A1y kx ky] on the lattice.

    ``aperture`` does not truncate chi; it is accepted so callers can pass
    one optics tuple around.
    """
    st = as_state(state)
    if st.n != 3:
        raise UnsupportedAberrationOrder(f"only (C1, A1x, A1y) is supported, got n = {st.n}")
    c1, a1x, a1y = st.coeffs
    kx, ky = frequency_grid(side, k_nyquist)
    return np.pi * wavelength * (c1 * (kx * kx + ky * ky) + a1x * (kx * kx - ky * ky)
                                 + 2.0 * a1y * kx * ky)


def phase_screen(side, seed):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(-np.pi, np.pi, size=(side, side))
    return np.exp(1j * SCREEN_STRENGTH * gaussian_filter(raw, SCREEN_SMOOTHING, mode="wrap"))


def band_envelope(side, k_nyquist):
    """Smooth annular envelope B(q) peaking at 0.15 k_N."""
    kx, ky = frequency_grid(side, k_nyquist)
    q = np.hypot(kx, ky) / k_nyquist
    return np.exp(-0.5 * ((q - 0.15) / 0.07) ** 2)


def expected_spectrum(state, config):
    """analytic_even expected power spectrum h(x) (exactly even in x)."""
    chi = aberration_phase(state, config.side, config.wavelength, config.aperture_semiangle,
                           config.k_nyquist)
    # sin^2 is taken of |chi| so that h(-x) == h(x) holds bit for bit
    s = np.sin(np.abs(chi))
    B = band_envelope(config.side, config.k_nyquist)
    return config.dose * (B * s) ** 2 + FLOOR_FRACTION * config.dose


def _synthesis_phases(side, seed):
    """Seeded antisymmetric phase field so the synthesized image is real."""
    rng = np.random.default_rng([seed, 7])
    psi = rng.uniform(-np.pi, np.pi, size=(side, side))
    mirror = np.roll(psi[::-1, ::-1], 1, axis=(0, 1))  # value at -q (centred layout)
    return 0.5 * (psi - mirror)


def _analytic_image(state, config):
    h = expected_spectrum(state, config)
    amp = np.sqrt(h) * np.exp(1j * _synthesis_phases(config.side, config.phase_screen_seed))
    img = np.fft.ifft2(np.fft.ifftshift(amp)).real * config.side
    g = img - img.min()
    mask = aperture_mask(config.side, config.aperture_semiangle)
    return _normalize(g, mask, config.dose)


def _normalize(g, mask, dose):
    floor = FLOOR_FRACTION * dose
    n_ap = int(mask.sum())
    total = float(g[mask].sum())
    if not total > 0:
        raise SimulationError("simulated intensity vanishes inside the aperture")
    # after adding the floor, the in-aperture sum is exactly dose * n_ap
    return g * ((dose - floor) * n_ap / total) + floor


def _wave_image(state, config):
    side = config.side
    chi = aberration_phase(state, side, config.wavelength, config.aperture_semiangle,
                           config.k_nyquist)
    mask = aperture_mask(side, config.aperture_semiangle)
    probe = np.fft.ifft2(np.fft.ifftshift(mask * np.exp(-1j * chi)))
    exit_wave = probe * phase_screen(side, config.phase_screen_seed)
    g = np.abs(np.fft.fftshift(np.fft.fft2(exit_wave))) ** 2
    return _normalize(g, mask, config.dose)


def expected_image(state, config):
    """Expected detector counts g(x) (strictly positive, side x side)."""
    if config.mode == "wave":
        g = _wave_image(state, config)
    else:
        g = _analytic_image(state, config)
    if not np.all(np.isfinite(g)):
        raise SimulationError("non-finite expected intensity")
    return g


def sample_ronchigram(expected, rng_seed=None, state_tag=None):
    """Independent per-pixel Poisson draws; ``rng_seed`` may be a Generator."""
    lam = np.asarray(expected, dtype=float)
    if not np.all(np.isfinite(lam)):
        raise SimulationError("expected intensity contains non-finite rates")
    if np.any(lam < 0):
        raise SimulationError("expected intensity contains negative rates")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    tag = None if state_tag is None else as_state(state_tag)
    return Ronchigram(rng.poisson(lam).astype(np.uint32), tag)


def simulate(state, config, rng_seed=None):
    return sample_ronchigram(expected_image(state, config), rng_seed, state_tag=state)


# dataset directories

_CONFIG_FIELDS = tuple(SimConfig.__dataclass_fields__)


def save_dataset(directory, grams, seeds, config, kind="counts", grids=None):
    """Write Ronchigrams (or ``grids`` of spectra) plus ``metadata.csv``.

    Columns: index, file, seed, C1, A1x, A1y, then every SimConfig field.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PersistenceError(f"cannot create {directory}: {exc}") from exc
    rows = []
    payload = grids if grids is not None else [g.counts for g in grams]
    for i, (grid, seed) in enumerate(zip(payload, seeds)):
        name = f"{kind}_{i:05d}.bin"
        gridio.write_grid(directory / name, grid, kind)
        tag = grams[i].state_tag if grams is not None else None
        coeffs = tag.coeffs if tag is not None else ("",) * 3
        row = {"index": i, "file": name, "seed": seed}
        row.update(dict(zip(COEFF_NAMES, coeffs)))
        row.update(config.as_dict())
        rows.append(row)
    gridio.write_table(directory, rows, ["index", "file", "seed", *COEFF_NAMES, *_CONFIG_FIELDS])


def _config_from_row(row):
    kw = {k: row[k] for k in _CONFIG_FIELDS}
    for k in ("side", "phase_screen_seed"):
        kw[k] = int(kw[k])
    for k in ("wavelength", "aperture_semiangle", "dose", "k_nyquist"):
        kw[k] = float(kw[k])
    return SimConfig(**kw)


def load_dataset(directory):
    """Returns (grids (K, side, side), states (K, 3) or None, seeds, config, kind)."""
    directory = Path(directory)
    rows = gridio.read_table(directory)
    if not rows:
        return np.zeros((0, 0, 0)), None, [], None, "counts"
    config = _config_from_row(rows[0])
    kind = rows[0]["file"].split("_")[0]
    grids = np.stack([gridio.read_grid(directory / r["file"], config.side, kind) for r in rows])
    states = None
    if rows[0]["C1"] != "":
        states = np.array([[float(r[c]) for c in COEFF_NAMES] for r in rows])
    seeds = [int(r["seed"]) for r in rows]
    return grids, states, seeds, config, kind
