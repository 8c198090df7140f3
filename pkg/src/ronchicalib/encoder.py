"""Dense variational autoencoder on pooled power spectra, plus a PCA baseline.

Spectra (log1p-compressed, side x side) are average-pooled to 16 x 16,
standardized with dataset statistics, and flattened. The encoder maps the
256 inputs through 128 and 64 LeakyReLU units to (mu, logvar); the decoder
mirrors it and has a fixed unit output variance. Gradients are derived by
hand and the ELBO is maximized with momentum gradient ascent.
"""

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import EncodingError, PersistenceError, RankError, ShapeError, TrainingError

log = logging.getLogger(__name__)

SLOPE = 0.01
POOLED_SIDE = 16
MAGIC = b"RCVAE\x00\x01\n"
LOG_2PI = math.log(2.0 * math.pi)


def leaky(a):
    return np.where(a > 0, a, SLOPE * a)


def leaky_grad(a):
    return np.where(a > 0, 1.0, SLOPE)


def kl_divergence(mu, logvar):
    """KL(N(mu, diag exp(logvar)) || N(0, I)) per row."""
    mu = np.atleast_2d(mu)
    logvar = np.atleast_2d(logvar)
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - logvar - 1.0, axis=1)


def _init_layers(sizes, rng, out_scale=0.1):
    """He-scaled hidden layers; the output layer starts ``out_scale`` times smaller."""
    layers = []
    last = len(sizes) - 2
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = rng.standard_normal((fan_out, fan_in)) * math.sqrt(2.0 / fan_in)
        if i == last:
            W *= out_scale
        layers.append((W, np.zeros(fan_out)))
    return layers


def _forward(layers, x):
    """Returns output and the cache of (input, pre-activation) per layer."""
    cache = []
    h = x
    for i, (W, b) in enumerate(layers):
        a = h @ W.T + b
        cache.append((h, a))
        h = leaky(a) if i < len(layers) - 1 else a
    return h, cache


def _backward(layers, cache, d_out):
    """Gradients of a scalar w.r.t. layer weights, given d scalar / d output."""
    grads = [None] * len(layers)
    d = d_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h, a = cache[i]
        if i < len(layers) - 1:
            d = d * leaky_grad(a)
        grads[i] = (d.T @ h, d.sum(axis=0))
        d = d @ W
    return grads, d


@dataclass
class VAEParams:
    encoder: list  # [(W, b)], W is (out, in)
    decoder: list
    latent_dim: int
    decoder_logvar: float = 0.0
    input_mean: np.ndarray = None  # standardization statistics
    input_scale: np.ndarray = 1.0
    pool: int = 1
    side: int = None
    train: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, input_dim, latent_dim, hidden=(128, 64), seed=0):
        rng = np.random.default_rng(seed)
        enc = _init_layers([input_dim, *hidden, 2 * latent_dim], rng)
        dec = _init_layers([latent_dim, *reversed(hidden), input_dim], rng)
        return cls(enc, dec, latent_dim, input_mean=np.zeros(input_dim))

    @property
    def input_dim(self):
        return self.encoder[0][0].shape[1]

    def arrays(self):
        out = []
        for W, b in self.encoder + self.decoder:
            out.extend([W, b])
        return out

    def vector(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, v):
        v = np.asarray(v, dtype=float)
        pos = 0
        rebuilt = []
        for W, b in self.encoder + self.decoder:
            nw, nb = W.size, b.size
            rebuilt.append((v[pos:pos + nw].reshape(W.shape), v[pos + nw:pos + nw + nb].copy()))
            pos += nw + nb
        k = len(self.encoder)
        return VAEParams(rebuilt[:k], rebuilt[k:], self.latent_dim, self.decoder_logvar,
                         self.input_mean, self.input_scale, self.pool, self.side, dict(self.train))


@dataclass
class EncoderOutput:
    mu: np.ndarray
    logvar: np.ndarray


def encode_inputs(params, X):
    """Forward pass on prepared (standardized, flattened) inputs: (B, D)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.input_dim:
        raise EncodingError(f"encoder expects {params.input_dim} inputs, got {X.shape[1]}")
    out, _ = _forward(params.encoder, X)
    return EncoderOutput(out[:, :params.latent_dim], out[:, params.latent_dim:])


def decode(params, z):
    """Reconstruction mean mu_beta(z), in prepared-input units: (B, D)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    out, _ = _forward(params.decoder, z)
    return out


def pool_spectra(spectra, pool):
    S = np.asarray(spectra, dtype=float)
    if S.ndim == 2:
        S = S[None]
    K, side, _ = S.shape
    if side % pool:
        raise ShapeError(f"side {side} is not divisible by pool factor {pool}")
    m = side // pool
    return S.reshape(K, m, pool, m, pool).mean(axis=(2, 4)).reshape(K, m * m)


def prepare(params, spectra):
    """Pool and standardize spectra with the parameters' stored statistics."""
    S = np.asarray(spectra, dtype=float)
    if S.ndim == 2:
        S = S[None]
    if params.side is not None and S.shape[-1] != params.side:
        raise EncodingError(f"encoder trained on side {params.side}, got {S.shape[-1]}")
    X = pool_spectra(S, params.pool)
    return (X - params.input_mean) / params.input_scale


def encode(params, spectrum):
    """Deterministic encoding of one spectrum (or a stack) into (mu, logvar)."""
    values = getattr(spectrum, "values", spectrum)
    try:
        X = prepare(params, values)
    except ShapeError as exc:
        raise EncodingError(str(exc)) from exc
    return encode_inputs(params, X)


def encode_mean(params, spectra):
    """z = mu_alpha(y) for each spectrum: (K, l)."""
    return encode(params, spectra).mu


def _elbo_terms(params, X, eps):
    out, enc_cache = _forward(params.encoder, X)
    ell = params.latent_dim
    mu, logvar = out[:, :ell], out[:, ell:]
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    recon, dec_cache = _forward(params.decoder, z)
    var = math.exp(params.decoder_logvar)
    resid = X - recon
    D = X.shape[1]
    rec = -0.5 * np.sum(resid * resid, axis=1) / var - 0.5 * D * (LOG_2PI + params.decoder_logvar)
    kl = kl_divergence(mu, logvar)
    return rec, kl, (mu, logvar, std, resid, var, enc_cache, dec_cache)


def elbo(params, batch, rng, samples=1):
    """Mean over the batch of E_q[log p(x|z)] - KL(q || N(0, I)).

    The expectation uses ``samples`` reparameterized draws per datum.
    """
    X = np.atleast_2d(np.asarray(batch, dtype=float))
    total = 0.0
    for _ in range(samples):
        eps = rng.standard_normal((X.shape[0], params.latent_dim))
        rec, kl, _ = _elbo_terms(params, X, eps)
        total += float(np.mean(rec - kl))
    return total / samples


def elbo_gradient(params, batch, rng, return_value=False):
    """Exact gradient of the one-sample ELBO along the path fixed by ``rng``.

    Returns a list of arrays aligned with ``params.arrays()``.
    """
    X = np.atleast_2d(np.asarray(batch, dtype=float))
    B = X.shape[0]
    eps = rng.standard_normal((B, params.latent_dim))
    rec, kl, (mu, logvar, std, resid, var, enc_cache, dec_cache) = _elbo_terms(params, X, eps)
    d_recon = resid / (var * B)
    dec_grads, d_z = _backward(params.decoder, dec_cache, d_recon)
    d_mu = d_z - mu / B
    d_logvar = d_z * eps * 0.5 * std - 0.5 * (np.exp(logvar) - 1.0) / B
    enc_grads, _ = _backward(params.encoder, enc_cache, np.hstack([d_mu, d_logvar]))
    flat = []
    for gW, gb in enc_grads + dec_grads:
        flat.extend([gW, gb])
    if return_value:
        return flat, float(np.mean(rec - kl))
    return flat


@dataclass
class TrainConfig:
    latent_dim: int = 3
    hidden: tuple = (128, 64)
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    momentum: float = 0.9
    seed: int = 0
    pooled_side: int = POOLED_SIDE
    input_gain: float = 1.0  # per-pixel std of standardized inputs; decoder variance is 1
    min_samples: int = 200


def fit_standardization(X, gain=1.0):
    """Per-pixel mean and scale so that every pixel has standard deviation ``gain``.

    Pixel deviations are floored at 1e-3 of the largest to keep flat pixels finite.
    """
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    floor = 1e-3 * float(sd.max()) if sd.max() > 0 else 1.0
    return mean, np.maximum(sd, floor) / gain


def train_vae(spectra, config=None):
    """Fit a VAE to a stack of log1p spectra (K, side, side).

    Returns (params, elbo_log) where elbo_log holds the mean batch ELBO of
    every epoch.
    """
    config = config or TrainConfig()
    S = np.asarray(spectra, dtype=float)
    if S.ndim != 3 or S.shape[1] != S.shape[2]:
        raise ShapeError("training spectra must be a (K, side, side) stack")
    if S.shape[0] < config.min_samples:
        raise ShapeError(f"need at least {config.min_samples} spectra, got {S.shape[0]}")
    side = S.shape[1]
    pool = max(1, side // config.pooled_side)
    raw = pool_spectra(S, pool)
    mean, scale = fit_standardization(raw, config.input_gain)
    X = (raw - mean) / scale
    params = VAEParams.initialize(X.shape[1], config.latent_dim, tuple(config.hidden), config.seed)
    params.input_mean, params.input_scale, params.pool, params.side = mean, scale, pool, side
    rng = np.random.default_rng(config.seed)
    theta = params.vector()
    velocity = np.zeros_like(theta)
    elbo_log = []
    K = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(K)
        values = []
        for start in range(0, K, config.batch_size):
            idx = order[start:start + config.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
                grads, value = elbo_gradient(params, X[idx], rng, return_value=True)
            g = np.concatenate([a.ravel() for a in grads])
            if not (math.isfinite(value) and np.all(np.isfinite(g))):
                raise TrainingError("ELBO diverged", epoch)
            velocity = config.momentum * velocity + config.learning_rate * g
            theta = theta + velocity
            params = params.with_vector(theta)
            values.append(value)
        elbo_log.append(float(np.mean(values)))
        log.debug("epoch %d  elbo %.4f", epoch, elbo_log[-1])
    params.train = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()}
    return params, elbo_log


def reconstruct(params, spectra):
    """decode(encode(x)) mapped back to pooled log1p units: (K, D)."""
    X = prepare(params, spectra)
    return decode(params, encode_inputs(params, X).mu) * params.input_scale + params.input_mean


def reconstruction_error(params, spectra):
    """Relative L2 round-trip error per spectrum, in pooled log1p units."""
    S = np.asarray(spectra, dtype=float)
    raw = pool_spectra(S, params.pool)
    return np.linalg.norm(reconstruct(params, S) - raw, axis=1) / np.linalg.norm(raw, axis=1)


def latent_noise_diagnostics(params, spectra, skew_bound=0.5, kurt_bound=1.0):
    """Skewness / excess kurtosis of encodings of repeated draws at one state.

    Soft check: violations are logged, never raised.
    """
    Z = encode_mean(params, spectra)
    skew = stats.skew(Z, axis=0)
    kurt = stats.kurtosis(Z, axis=0)
    ok = bool(np.all(np.abs(skew) < skew_bound) and np.all(np.abs(kurt) < kurt_bound))
    if not ok:
        log.warning("latent noise departs from Gaussian: skew=%s kurtosis=%s",
                    np.round(skew, 3), np.round(kurt, 3))
    return {"skew": skew, "excess_kurtosis": kurt, "gaussian": ok}


# PCA baseline

@dataclass
class PCABasis:
    mean: np.ndarray
    components: np.ndarray  # (l, D)
    explained_variance: np.ndarray
    explained_ratio: np.ndarray


def fit_pca(X, latent_dim, tol=1e-10):
    X = np.asarray(X, dtype=float)
    if X.ndim > 2:
        X = X.reshape(X.shape[0], -1)
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    rank = int(np.sum(s > tol * max(s[0] if s.size else 0.0, 1e-300)))
    if latent_dim > rank:
        raise RankError(f"requested {latent_dim} components but centred data has rank {rank}")
    var = s**2 / max(X.shape[0] - 1, 1)
    total = var.sum()
    return PCABasis(mean, Vt[:latent_dim], var[:latent_dim], var[:latent_dim] / total)


def encode_pca(basis, X):
    X = np.asarray(X, dtype=float)
    flat = X.reshape(-1, basis.mean.size) if X.ndim > 1 else X[None]
    return (flat - basis.mean) @ basis.components.T


def decode_pca(basis, Z):
    return np.atleast_2d(Z) @ basis.components + basis.mean


# weight container

def _array_names(params):
    names = []
    for part, layers in (("enc", params.encoder), ("dec", params.decoder)):
        for i in range(len(layers)):
            names.extend([f"{part}{i}.W", f"{part}{i}.b"])
    return names + ["input_mean", "input_scale"]


def save_params(params, path, elbo_log=None):
    """Binary container ``path`` plus a JSON manifest ``path + '.json'``.

    Container: 8 magic bytes, uint32 array count, then per array a uint32
    rank, uint32 dims and the float64 values, all little-endian.
    """
    path = Path(path)
    arrays = params.arrays() + [params.input_mean, np.broadcast_to(params.input_scale, np.shape(params.input_mean))]
    chunks = [MAGIC, struct.pack("<I", len(arrays))]
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        chunks.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        chunks.append(a.tobytes())
    manifest = {
        "format": "ronchicalib-vae",
        "version": 1,
        "latent_dim": params.latent_dim,
        "encoder_layers": len(params.encoder),
        "decoder_layers": len(params.decoder),
        "decoder_logvar": params.decoder_logvar,
        "pool": params.pool,
        "side": params.side,
        "arrays": _array_names(params),
        "train": _jsonable(params.train),
        "elbo_log": list(elbo_log or []),
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(b"".join(chunks))
        Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2))
    except OSError as exc:
        raise PersistenceError(f"cannot write encoder weights to {path}: {exc}") from exc


def _jsonable(d):
    return json.loads(json.dumps(d, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))


def load_params(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
        manifest = json.loads(Path(str(path) + ".json").read_text())
    except OSError as exc:
        raise PersistenceError(f"cannot read encoder weights at {path}: {exc}") from exc
    if raw[:len(MAGIC)] != MAGIC:
        raise PersistenceError(f"{path} is not an encoder weight container")
    pos = len(MAGIC)
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    arrays = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(shape))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).copy())
        pos += 8 * size
    ne, nd = manifest["encoder_layers"], manifest["decoder_layers"]
    layers = [(arrays[2 * i], arrays[2 * i + 1]) for i in range(ne + nd)]
    return VAEParams(layers[:ne], layers[ne:], manifest["latent_dim"], manifest["decoder_logvar"],
                     arrays[-2], arrays[-1], manifest["pool"], manifest["side"],
                     manifest.get("train", {}))
