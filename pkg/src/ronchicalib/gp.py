"""Symmetry-constrained Gaussian-process models of the aberration-to-latent map.

Every latent dimension is an independent GP sharing one symmetrized
squared-exponential kernel

    k(x, x') = 1/2 (k0(x, x') + k0(x, -x')),
    k0(x, x') = sf2 exp(-1/2 (x - x')^T L^-1 (x - x')),

with diagonal L, plus per-dimension observation noise. Means are even
functions of x, so every draw of the GP is even.
"""

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .basis import LinearMap, ZeroMean
from .errors import ConfigError, PersistenceError, RankError, ShapeError
from .latent import LatentDataset

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class KernelConfig:
    signal_variance: float
    lengthscales: np.ndarray  # (n,), diagonal of L is lengthscales**2
    noise_variance: np.ndarray  # (l,)

    def __post_init__(self):
        self.signal_variance = float(self.signal_variance)
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        self.noise_variance = np.atleast_1d(np.asarray(self.noise_variance, dtype=float))
        if not (self.signal_variance > 0 and np.all(self.lengthscales > 0)
                and np.all(self.noise_variance > 0)):
            raise ConfigError("kernel hyperparameters must be strictly positive")

    @property
    def inv_ls2(self):
        return 1.0 / self.lengthscales**2

    def prior_variance(self, X):
        """k(x, x) for each row of X."""
        X = np.atleast_2d(X)
        return 0.5 * self.signal_variance * (1.0 + np.exp(-2.0 * np.sum(X * X * self.inv_ls2, axis=1)))


class PriorMean:
    """Even prior mean on a grid of symmetrized piecewise-linear hats.

    Knots sit at ``-extent + k h`` for k = 0..knots-1 on every axis (knots
    odd, so the grid is symmetric). Tensor hats at mirrored knots are merged
    into one basis function 1/2 (phi_a(x) + phi_a(-x)), leaving
    ``m = (knots**n + 1) / 2`` functions. Points outside the box are clamped
    to it, which preserves evenness.
    """

    def __init__(self, n, knots, extent, weights=None, latent_dim=1):
        if knots < 3 or knots % 2 == 0:
            raise ConfigError("knots per axis must be odd and >= 3")
        self.n = int(n)
        self.knots = int(knots)
        self.extent = float(extent)
        self.spacing = 2.0 * self.extent / (self.knots - 1)
        total = self.knots**self.n
        self.m = (total + 1) // 2
        if weights is None:
            weights = np.zeros((latent_dim, self.m))
        self.weights = np.atleast_2d(np.asarray(weights, dtype=float))
        if self.weights.shape[1] != self.m:
            raise ShapeError(f"expected {self.m} weights per latent dimension")
        flat = np.arange(total)
        # representative of each mirror pair is the lower flat index
        self._uid = np.minimum(flat, total - 1 - flat)
        corners = np.array(list(itertools.product((0, 1), repeat=self.n)))
        self._corners = corners
        self._strides = self.knots ** np.arange(self.n)

    @property
    def latent_dim(self):
        return self.weights.shape[0]

    def _half_design(self, X):
        """Sparse pieces of Phi_rep(x): (rows, cols, vals) over unique ids.

        Phi_rep carries each pair's representative hat at x, so the even
        basis is 1/2 (Phi_rep(x) + Phi_rep(-x)).
        """
        Xc = np.clip(X, -self.extent, self.extent)
        u = (Xc + self.extent) / self.spacing
        cell = np.clip(np.floor(u).astype(int), 0, self.knots - 2)
        t = u - cell
        M = X.shape[0]
        rows, cols, vals = [], [], []
        total = self.knots**self.n
        for c in self._corners:
            idx = (cell + c) @ self._strides
            w = np.prod(np.where(c == 1, t, 1.0 - t), axis=1)
            rep = idx <= total - 1 - idx
            rows.append(np.arange(M)[rep])
            cols.append(self._uid[idx[rep]])
            vals.append(w[rep])
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def _rep_values(self, X):
        rows, cols, vals = self._half_design(X)
        out = np.zeros((X.shape[0], self.latent_dim))
        np.add.at(out, rows, vals[:, None] * self.weights[:, cols].T)
        return out

    def design(self, X):
        """Dense even design matrix Psi(x): (M, m)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros((X.shape[0], self.m))
        for sign in (1.0, -1.0):
            rows, cols, vals = self._half_design(sign * X)
            np.add.at(out, (rows, cols), 0.5 * vals)
        return out

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return 0.5 * (self._rep_values(X) + self._rep_values(-X))

    def state(self):
        meta = {"type": "hat", "n": self.n, "knots": self.knots, "extent": self.extent}
        return meta, {"weights": self.weights}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(meta["n"], meta["knots"], meta["extent"], arrays["weights"])


@dataclass
class GPModel:
    kernel: KernelConfig
    mean: object  # callable (M, n) -> (M, l), even
    latent_dim: int = field(default=None)

    def __post_init__(self):
        if self.latent_dim is None:
            self.latent_dim = self.mean.latent_dim
        if self.kernel.noise_variance.size == 1 and self.latent_dim > 1:
            self.kernel.noise_variance = np.repeat(self.kernel.noise_variance, self.latent_dim)
        if self.kernel.noise_variance.size != self.latent_dim or self.mean.latent_dim != self.latent_dim:
            raise ShapeError("kernel noise, mean, and latent dimension disagree")

    @property
    def n(self):
        return self.kernel.lengthscales.size


def kernel_eval(cfg, x, xp):
    """Symmetrized SE kernel value k(x, x')."""
    x = np.reshape(np.asarray(x, dtype=float), (1, -1))
    xp = np.reshape(np.asarray(xp, dtype=float), (1, -1))
    return float(kernels.sym_se_gram(x, xp, cfg.signal_variance, cfg.inv_ls2)[0, 0])


def trajectory_points(candidate, S):
    return np.asarray(candidate, dtype=float)[None, :] + S


def gram_matrix(model, candidate, S):
    """K_ts = k(x0 + s(t), x0 + s(s)) for one candidate."""
    X = trajectory_points(candidate, np.atleast_2d(S))
    return kernels.sym_se_gram(X, X, model.kernel.signal_variance, model.kernel.inv_ls2)


def _candidate_batch(model, dataset, candidates):
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    X = C[:, None, :] + dataset.S[None, :, :]  # (N, M, n)
    N, M, n = X.shape
    mu = model.mean(X.reshape(N * M, n)).reshape(N, M, model.latent_dim)
    return X, dataset.Z[None, :, :] - mu


def candidate_log_likelihoods(model, dataset, candidates):
    """log p(Z | x0_i) for every candidate, summing independent latent GPs."""
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    M = len(dataset)
    if M == 0:
        return np.zeros(C.shape[0])
    X, D = _candidate_batch(model, dataset, C)
    K = kernels.sym_se_gram(X, X, model.kernel.signal_variance, model.kernel.inv_ls2)
    res = kernels.factor_solve(K, D, model.kernel.noise_variance, model.kernel.signal_variance)
    return -0.5 * np.sum(res["quad"] + res["logdet"] + M * LOG_2PI, axis=1)


def fixed_prior_log_likelihoods(model, dataset, candidates):
    """log p(Z | x0_i) with f pinned to the prior mean (no GP uncertainty)."""
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    M = len(dataset)
    if M == 0:
        return np.zeros(C.shape[0])
    _, D = _candidate_batch(model, dataset, C)
    noise = model.kernel.noise_variance
    quad = np.sum(D * D / noise, axis=(1, 2))
    return -0.5 * (quad + M * np.sum(np.log(noise)) + M * model.latent_dim * LOG_2PI)


def log_marginal_likelihood(model, dataset, candidate):
    return float(candidate_log_likelihoods(model, dataset, np.reshape(candidate, (1, -1)))[0])


class CandidatePosterior:
    """GP posterior over f given the dataset and one or more candidate origins.

    With several candidates and weights, :meth:`mean` is the weighted mixture
    of the per-candidate posterior means. Factorizations happen lazily on the
    first query and are counted by :data:`kernels.factorizations`.
    """

    def __init__(self, model, dataset, candidates, weights=None):
        self.model = model
        self.dataset = dataset
        self.candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
        N = self.candidates.shape[0]
        self.weights = np.full(N, 1.0 / N) if weights is None else np.asarray(weights, dtype=float)
        self._alpha = None
        self._chol = None
        self._X = None

    def _factor(self, need_chol=False):
        if self._alpha is not None and (self._chol is not None or not need_chol):
            return
        if len(self.dataset) == 0:
            self._alpha = np.zeros((self.candidates.shape[0], 0, self.model.latent_dim))
            self._X = np.zeros((self.candidates.shape[0], 0, self.model.n))
            self._chol = np.zeros((self.candidates.shape[0], self.model.latent_dim, 0, 0))
            return
        X, D = _candidate_batch(self.model, self.dataset, self.candidates)
        K = kernels.sym_se_gram(X, X, self.model.kernel.signal_variance, self.model.kernel.inv_ls2)
        res = kernels.factor_solve(K, D, self.model.kernel.noise_variance,
                                   self.model.kernel.signal_variance, keep_factors=need_chol)
        self._X, self._alpha, self._chol = X, res["alpha"], res["chol"]

    def _cross(self, Q):
        N = self.candidates.shape[0]
        Qb = np.broadcast_to(Q, (N,) + Q.shape)
        return kernels.sym_se_gram(Qb, self._X, self.model.kernel.signal_variance,
                                   self.model.kernel.inv_ls2)  # (N, Q, M)

    def component_means(self, Q):
        """Per-candidate posterior means: (N, Q, l)."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self._factor()
        prior = self.model.mean(Q)
        if self._X.shape[1] == 0:
            return np.broadcast_to(prior, (self.candidates.shape[0],) + prior.shape).copy()
        kx = self._cross(Q)
        return prior[None] + np.einsum("nqm,nml->nql", kx, self._alpha)

    def mean(self, Q):
        """Weighted mixture posterior mean: (Q, l)."""
        return np.einsum("n,nql->ql", self.weights, self.component_means(Q))

    def variance(self, Q):
        """Per-candidate posterior variance, clamped at zero: (N, Q, l)."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self._factor(need_chol=True)
        prior = self.model.kernel.prior_variance(Q)
        N, ell = self.candidates.shape[0], self.model.latent_dim
        if self._X.shape[1] == 0:
            return np.broadcast_to(prior[None, :, None], (N, Q.shape[0], ell)).copy()
        kx = self._cross(Q)
        out = np.empty((N, Q.shape[0], ell))
        for j in range(ell):
            V = np.linalg.solve(self._chol[:, j], np.transpose(kx, (0, 2, 1)))  # (N, M, Q)
            out[:, :, j] = prior[None, :] - np.sum(V * V, axis=1)
        return np.maximum(out, 0.0)


def posterior_mean(model, dataset, candidate, Q):
    return CandidatePosterior(model, dataset, np.reshape(candidate, (1, -1))).mean(Q)


def posterior_variance(model, dataset, candidate, Q):
    return CandidatePosterior(model, dataset, np.reshape(candidate, (1, -1))).variance(Q)[0]


def fit_prior_mean(X, Z, knots=7, extent=200.0, ridge=1e-8):
    """Least-squares fit of a symmetrized hat-grid mean to labelled latents.

    X: (M, n) known states, Z: (M, l) latents.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    mean = PriorMean(X.shape[1], knots, extent, latent_dim=Z.shape[1])
    if X.shape[0] < mean.m:
        raise RankError(f"{X.shape[0]} samples cannot determine {mean.m} basis weights")
    Psi = mean.design(X)
    G = Psi.T @ Psi
    G[np.diag_indices_from(G)] += ridge
    try:
        W = np.linalg.solve(G, Psi.T @ Z)
    except np.linalg.LinAlgError as exc:
        raise RankError(f"prior-mean normal equations singular: {exc}") from exc
    mean.weights = W.T
    return mean


def default_grids(X, R, points=7):
    """Log-spaced hyperparameter grids scaled to the data."""
    v = np.var(R, axis=0)
    vbar = float(np.mean(v))
    spread = np.std(X, axis=0)
    spread[spread <= 0] = 1.0
    return {
        "signal_variance": vbar * np.logspace(-3, 0.5, points),
        "lengthscales": [s * np.logspace(-1, 0.5, points) for s in spread],
        "noise_variance": [vj * np.logspace(-3, 0, points) for vj in v],
    }


def hyperparameter_table(model, X, Z, grids):
    """Per-dimension log marginal likelihoods over the full grid.

    Returns array LL[ls_index..., sf2_index, noise_index, dim] where the
    lengthscale axes come first in dimension order.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    R = np.asarray(Z, dtype=float) - model.mean(X)
    M, ell = R.shape
    sf2s = np.asarray(grids["signal_variance"], dtype=float)
    ls_axes = [np.asarray(a, dtype=float) for a in grids["lengthscales"]]
    noise_axes = np.asarray(grids["noise_variance"], dtype=float)
    if noise_axes.ndim == 1:
        noise_axes = np.tile(noise_axes, (ell, 1))
    if sf2s.size == 0 or noise_axes.shape[1] == 0 or any(a.size == 0 for a in ls_axes):
        raise ConfigError("hyperparameter grid is empty")
    shape = tuple(a.size for a in ls_axes) + (sf2s.size, noise_axes.shape[1], ell)
    table = np.empty(shape)
    for idx in itertools.product(*[range(a.size) for a in ls_axes]):
        ls = np.array([ls_axes[d][i] for d, i in enumerate(idx)])
        Kr = kernels.sym_se_gram(X, X, 1.0, 1.0 / ls**2)
        lam, Q = np.linalg.eigh(Kr)
        lam = np.maximum(lam, 0.0)
        proj2 = (Q.T @ R) ** 2  # (M, l)
        # var[s, k, j, i] = sf2_s lam_i + noise_{j,k}
        var = sf2s[:, None, None, None] * lam[None, None, None, :] + noise_axes.T[None, :, :, None]
        quad = np.einsum("skji,ij->skj", 1.0 / var, proj2)
        logdet = np.sum(np.log(var), axis=-1)
        table[idx] = -0.5 * (quad + logdet + M * LOG_2PI)
    return table


def fit_hyperparameters(model, X, Z, grids=None, points=7):
    """Exhaustive log-grid maximum-likelihood search for kernel hyperparameters.

    Noise variances are separate grid axes per latent dimension; since each
    dimension's likelihood only involves its own noise, the joint argmax is
    found by maximizing each dimension's noise independently.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if grids is None:
        grids = default_grids(X, Z - model.mean(X), points)
    table = hyperparameter_table(model, X, Z, grids)
    best_noise = np.max(table, axis=-2)  # (..., sf2, dim)
    total = np.sum(best_noise, axis=-1)
    flat = int(np.argmax(total))
    idx = np.unravel_index(flat, total.shape)
    ls = np.array([np.asarray(grids["lengthscales"][d])[i] for d, i in enumerate(idx[:-1])])
    sf2 = float(np.asarray(grids["signal_variance"])[idx[-1]])
    noise_axes = np.asarray(grids["noise_variance"], dtype=float)
    if noise_axes.ndim == 1:
        noise_axes = np.tile(noise_axes, (Z.shape[1], 1))
    nidx = np.argmax(table[idx], axis=0)  # per-dim noise index
    noise = np.array([noise_axes[j, nidx[j]] for j in range(Z.shape[1])])
    return KernelConfig(sf2, ls, noise)


_MEAN_TYPES = {"hat": PriorMean, "basis": LinearMap, "zero": ZeroMean}


def save_model(model, path):
    """Write ``<path>.json`` (hyperparameters, layout) and ``<path>.bin`` (float64 LE)."""
    path = Path(path)
    meta, arrays = model.mean.state()
    layout, offset, blobs = [], 0, []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        layout.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
        blobs.append(a.tobytes())
    manifest = {
        "format": "ronchicalib-gp",
        "version": 1,
        "latent_dim": model.latent_dim,
        "kernel": {
            "signal_variance": model.kernel.signal_variance,
            "lengthscales": model.kernel.lengthscales.tolist(),
            "noise_variance": model.kernel.noise_variance.tolist(),
        },
        "mean": meta,
        "arrays": layout,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
        path.with_suffix(".bin").write_bytes(b"".join(blobs))
    except OSError as exc:
        raise PersistenceError(f"cannot write GP model to {path}: {exc}") from exc


def load_model(path):
    path = Path(path)
    try:
        manifest = json.loads(path.with_suffix(".json").read_text())
        raw = path.with_suffix(".bin").read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read GP model at {path}: {exc}") from exc
    if manifest.get("format") != "ronchicalib-gp":
        raise PersistenceError(f"{path} is not a GP model manifest")
    arrays = {}
    for entry in manifest["arrays"]:
        count = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count,
                                              offset=entry["offset"]).reshape(entry["shape"]).copy()
    mean_cls = _MEAN_TYPES[manifest["mean"]["type"]]
    mean = mean_cls.from_state(manifest["mean"], arrays)
    k = manifest["kernel"]
    return GPModel(KernelConfig(k["signal_variance"], k["lengthscales"], k["noise_variance"]),
                   mean, manifest["latent_dim"])
