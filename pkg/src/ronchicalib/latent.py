"""Input trajectories and time-indexed latent datasets."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def _as_columns(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


@dataclass(frozen=True)
class Trajectory:
    """Applied inputs u(0..T-1) and their prefix sums s(0..T), s(0) = 0."""

    inputs: np.ndarray  # (T, n)

    @classmethod
    def empty(cls, n):
        return cls(np.zeros((0, n)))

    @property
    def n(self):
        return self.inputs.shape[1]

    @property
    def cumulative(self):
        n = self.inputs.shape[1]
        return np.vstack([np.zeros((1, n)), np.cumsum(self.inputs, axis=0)])

    def append(self, u):
        return Trajectory(np.vstack([self.inputs, np.reshape(u, (1, -1))]))


@dataclass(frozen=True)
class LatentDataset:
    """Pairs (z(t), s(t)) for t = 0..T.

    ``Z`` is (T+1, l) and ``S`` is (T+1, n). An empty dataset has T+1 = 0.
    """

    Z: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        Z = _as_columns(self.Z)
        S = _as_columns(self.S)
        if Z.shape[0] != S.shape[0]:
            raise ShapeError(f"latent/input length mismatch: {Z.shape[0]} vs {S.shape[0]}")
        if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(S))):
            raise ShapeError("latent dataset contains non-finite entries")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "S", S)

    @classmethod
    def empty(cls, n, latent_dim):
        return cls(np.zeros((0, latent_dim)), np.zeros((0, n)))

    def __len__(self):
        return self.Z.shape[0]

    @property
    def latent_dim(self):
        return self.Z.shape[1]

    @property
    def n(self):
        return self.S.shape[1]

    def append(self, z, s):
        return LatentDataset(np.vstack([self.Z, np.reshape(z, (1, -1))]),
                             np.vstack([self.S, np.reshape(s, (1, -1))]))

    @property
    def last_s(self):
        return self.S[-1] if len(self) else np.zeros(self.n)
