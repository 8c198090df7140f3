"""Scalar basis-function families over aberration space and linear maps on them."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

FAMILIES = ("sym_gauss", "gauss", "cosine", "hat", "sym_hat")


def _sq_dist(X, C):
    diff = X[:, None, :] - C[None, :, :]
    return np.sum(diff * diff, axis=-1)


def _hat(X, C, half_width):
    return np.prod(np.clip(1.0 - np.abs(X[:, None, :] - C[None, :, :]) / half_width, 0.0, None), axis=-1)


@dataclass
class BasisSet:
    """m scalar functions of x in R^n, tagged by family.

    ``centers`` holds Gaussian/hat centres (m, n); for the cosine family it
    holds the frequency vectors. ``width`` is the Gaussian standard deviation
    or the hat half-width. ``extent`` is the half-width of the evaluation box.
    """

    family: str
    centers: np.ndarray
    width: float = 1.0
    extent: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown basis family {self.family!r}")
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if self.width <= 0 or self.extent <= 0:
            raise ConfigError("basis width and extent must be positive")

    @property
    def m(self):
        return self.centers.shape[0]

    @property
    def n(self):
        return self.centers.shape[1]

    def __call__(self, X):
        """Evaluate all basis functions: (M, n) -> (M, m)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        C = self.centers
        if self.family == "gauss":
            return np.exp(-0.5 * _sq_dist(X, C) / self.width**2)
        if self.family == "sym_gauss":
            a = np.exp(-0.5 * _sq_dist(X, C) / self.width**2)
            b = np.exp(-0.5 * _sq_dist(X, -C) / self.width**2)
            return 0.5 * (a + b)
        if self.family == "cosine":
            return np.cos(X @ C.T)
        if self.family == "hat":
            return _hat(X, C, self.width)
        return 0.5 * (_hat(X, C, self.width) + _hat(X, -C, self.width))

    def bandwidth(self):
        """Angular frequency beyond which the spectrum is negligible (heuristic)."""
        if self.family == "cosine":
            return float(np.max(np.abs(self.centers)))
        if self.family in ("gauss", "sym_gauss"):
            return 6.0 / self.width
        return 12.0 / self.width

    def support_radius(self):
        """Radius (sup-norm) outside which every member is negligible."""
        if self.family == "cosine":
            return self.extent
        reach = 5.0 * self.width if self.family in ("gauss", "sym_gauss") else self.width
        return float(np.max(np.abs(self.centers))) + reach

    def probes(self, count, rng):
        return rng.uniform(-self.extent, self.extent, size=(count, self.n))


@dataclass
class LinearMap:
    """f(x) = W Phi(x): maps (M, n) points to (M, l) outputs."""

    basis: BasisSet
    weights: np.ndarray  # (l, m)

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if self.weights.shape[1] != self.basis.m:
            raise ConfigError("weight matrix does not match basis size")

    @property
    def latent_dim(self):
        return self.weights.shape[0]

    @property
    def n(self):
        return self.basis.n

    def __call__(self, X):
        return self.basis(X) @ self.weights.T

    def state(self):
        meta = {"type": "basis", "family": self.basis.family, "width": self.basis.width,
                "extent": self.basis.extent}
        return meta, {"centers": self.basis.centers, "weights": self.weights}

    @classmethod
    def from_state(cls, meta, arrays):
        basis = BasisSet(meta["family"], arrays["centers"], meta["width"], meta["extent"])
        return cls(basis, arrays["weights"])


@dataclass
class ZeroMean:
    n: int
    latent_dim: int

    def __call__(self, X):
        X = np.atleast_2d(X)
        return np.zeros((X.shape[0], self.latent_dim))

    def state(self):
        return {"type": "zero", "n": self.n, "latent_dim": self.latent_dim}, {}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(meta["n"], meta["latent_dim"])


@dataclass
class SumMap:
    """Pointwise sum of several maps with equal output dimension."""

    parts: list

    @property
    def latent_dim(self):
        return self.parts[0].latent_dim

    def __call__(self, X):
        out = self.parts[0](X)
        for p in self.parts[1:]:
            out = out + p(X)
        return out
