"""Backend dispatch for the hot GP kernels.

The compiled extension ``_ckernels`` is used when importable; otherwise the
NumPy implementation in ``_pykernels``. Set ``RONCHICALIB_BACKEND=python``
to force the fallback, or call :func:`use_backend` at runtime.
"""

import os
import threading

import numpy as np

from . import _pykernels
from .errors import NumericError

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_requested = os.environ.get("RONCHICALIB_BACKEND", "").strip().lower()
if _requested and _requested not in ("python", "compiled"):
    raise ImportError(f"unknown RONCHICALIB_BACKEND={_requested!r}")
BACKEND = _requested if _requested in _BACKENDS else ("compiled" if _ckernels else "python")
_impl = _BACKENDS[BACKEND]


def available_backends():
    return sorted(_BACKENDS)


def use_backend(name):
    """Switch the active backend; returns the previous name."""
    global BACKEND, _impl
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})")
    prev = BACKEND
    BACKEND, _impl = name, _BACKENDS[name]
    return prev


class FactorizationCounter:
    """Counts covariance factorizations (one per candidate per call)."""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, k):
        with self._lock:
            self.count += k

    def reset(self):
        with self._lock:
            self.count = 0


factorizations = FactorizationCounter()


def sym_se_gram(X, Y, sf2, inv_ls2):
    """Symmetrized SE covariance between point sets.

    Accepts (M, n) / (P, n) or batched (B, M, n) / (B, P, n) arrays.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    squeeze = X.ndim == 2
    if squeeze:
        X, Y = X[None], Y[None]
    X = np.ascontiguousarray(X)
    Y = np.ascontiguousarray(Y)
    inv = np.ascontiguousarray(np.broadcast_to(np.asarray(inv_ls2, dtype=float), (X.shape[2],)))
    out = _impl.sym_se_gram(X, Y, float(sf2), inv)
    return out[0] if squeeze else out


def factor_solve(K, D, noise, sf2, keep_factors=False):
    """Cholesky-factor ``K[b] + noise[j] I`` and solve against ``D[b, :, j]``.

    Returns a dict with ``logdet``, ``quad`` (B, l), ``alpha`` (B, M, l),
    ``chol`` (B, l, M, M) or None, and ``jitter`` (B,). Raises
    :class:`NumericError` when jitter escalation cannot restore definiteness.
    """
    K = np.ascontiguousarray(K, dtype=float)
    D = np.ascontiguousarray(D, dtype=float)
    noise = np.ascontiguousarray(noise, dtype=float)
    logdet, quad, alpha, chol, jitter, failed = _impl.factor_solve(
        K, D, noise, float(sf2), bool(keep_factors)
    )
    if failed >= 0:
        raise NumericError(f"covariance of batch entry {failed} not positive definite after jitter")
    factorizations.add(K.shape[0])
    return {"logdet": logdet, "quad": quad, "alpha": alpha, "chol": chol, "jitter": jitter}
