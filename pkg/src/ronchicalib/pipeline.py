"""Glue between the simulator, the encoder and the GP model.

A labelled corpus of simulated spectra is encoded to latents; the GP prior
mean and kernel are fitted to those (state, latent) pairs. During
calibration an :class:`ImageSource` plays the instrument: it renders a
Ronchigram at the true state, preprocesses and encodes it.
"""

import numpy as np

from . import encoder, gp, optics
from .preprocess import preprocess


def simulate_corpus(states, config, rng, log1p=True):
    """Noisy preprocessed spectra for each state: (K, side, side)."""
    return np.stack([preprocess(optics.simulate(x, config, rng), log1p).values for x in states])


def sample_states(count, n, box, rng):
    return rng.uniform(-box, box, size=(count, n))


def fit_latent_model(X, Z, knots=7, extent=200.0, grids=None):
    """Even hat-grid prior mean plus grid-searched kernel for (X, Z) pairs."""
    mean = gp.fit_prior_mean(X, Z, knots=knots, extent=extent)
    ell = mean.latent_dim
    seed_kernel = gp.KernelConfig(1.0, np.ones(X.shape[1]), np.ones(ell))
    kernel = gp.fit_hyperparameters(gp.GPModel(seed_kernel, mean, ell), X, Z, grids)
    return gp.GPModel(kernel, mean, ell)


def build_image_model(params, states, spectra, knots=7, extent=200.0):
    Z = encoder.encode_mean(params, spectra)
    return fit_latent_model(np.asarray(states, dtype=float), Z, knots, extent)


class ImageSource:
    """Renders, samples, preprocesses and encodes observations at x0 + s.

    ``config`` is the instrument; it may differ from the simulator the
    encoder and prior were built on (for example another phase-screen
    seed), which is how a model gap is introduced on the image path.
    """

    def __init__(self, params, config, x0, rng, log1p=True):
        self.params = params
        self.config = config
        self.x0 = np.asarray(x0, dtype=float)
        self.rng = rng
        self.log1p = log1p

    def observe(self, s):
        gram = optics.simulate(self.x0 + np.asarray(s, dtype=float), self.config, self.rng)
        spec = preprocess(gram, self.log1p)
        return encoder.encode_mean(self.params, spec.values)[0]
