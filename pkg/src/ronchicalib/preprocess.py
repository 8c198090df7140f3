"""Raw counts to power spectra: Hann window, 2-D DFT, squared modulus.

Spectra use the centred layout (DC at index side//2), so the point q and
its mirror -q sit at index i and (side - i) mod side on each axis.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def _square(image):
    a = np.asarray(image, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square 2-D grid, got shape {a.shape}")
    return a


def hann_1d(side):
    i = np.arange(side)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (side - 1)))


def hann_window(image):
    """Separable raw Hann taper w(i) w(j), no normalization."""
    a = _square(image)
    w = hann_1d(a.shape[0])
    return a * w[:, None] * w[None, :]


def mirror(grid):
    """Value at -q for every q of a centred grid."""
    return np.roll(grid[::-1, ::-1], 1, axis=(0, 1)) if grid.shape[0] % 2 == 0 else grid[::-1, ::-1]


@dataclass
class PowerSpectrum:
    values: np.ndarray
    log_scaled: bool = False

    def __post_init__(self):
        self.values = _square(self.values)

    @property
    def side(self):
        return self.values.shape[0]


def power_spectrum(image):
    """|DFT|^2 of a real image, DC centred.

    The two conjugate halves are averaged so that the point symmetry of a
    real-input spectrum holds bit for bit.
    """
    a = _square(image)
    p = np.abs(np.fft.fftshift(np.fft.fft2(a))) ** 2
    return PowerSpectrum(0.5 * (p + mirror(p)))


def preprocess(y, log1p=True):
    """power_spectrum(hann_window(counts)), optionally log1p-compressed.

    ``y`` may be a Ronchigram or a bare count grid.
    """
    counts = getattr(y, "counts", y)
    ps = power_spectrum(hann_window(np.asarray(counts, dtype=float)))
    if log1p:
        return PowerSpectrum(np.log1p(ps.values), log_scaled=True)
    return ps


def preprocess_batch(grams, log1p=True):
    return np.stack([preprocess(g, log1p).values for g in grams])
