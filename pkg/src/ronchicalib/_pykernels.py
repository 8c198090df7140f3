"""Pure-NumPy implementations of the hot GP kernels.

Used when the compiled extension is missing or when the python backend is
forced. Semantics match ``_ckernels.pyx`` to rounding.
"""

import numpy as np

JITTER_SCHEDULE = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def sym_se_gram(X, Y, sf2, inv_ls2):
    """Symmetrized squared-exponential cross-covariance, batched.

    X: (B, M, n), Y: (B, P, n) -> (B, M, P).
    """
    scale = np.sqrt(inv_ls2)
    Xs = X * scale
    Ys = Y * scale
    diff = Xs[:, :, None, :] - Ys[:, None, :, :]
    summ = Xs[:, :, None, :] + Ys[:, None, :, :]
    d2m = np.sum(diff * diff, axis=-1)
    d2p = np.sum(summ * summ, axis=-1)
    return 0.5 * sf2 * (np.exp(-0.5 * d2m) + np.exp(-0.5 * d2p))


def _chol_with_jitter(A, sf2):
    eye = np.eye(A.shape[0])
    for jit in JITTER_SCHEDULE:
        try:
            return np.linalg.cholesky(A + jit * sf2 * eye), jit * sf2
        except np.linalg.LinAlgError:
            continue
    return None, np.nan


def factor_solve(K, D, noise, sf2, keep_factors=False):
    """Factor K[b] + noise[j] I for every batch entry and latent dimension.

    Returns (logdet (B, l), quad (B, l), alpha (B, M, l), chol or None,
    jitter (B,), failed_index or -1).
    """
    B, M, _ = K.shape
    ell = D.shape[2]
    logdet = np.empty((B, ell))
    quad = np.empty((B, ell))
    alpha = np.empty((B, M, ell))
    chol = np.empty((B, ell, M, M)) if keep_factors else None
    jitter = np.zeros(B)
    eye = np.eye(M)
    for j in range(ell):
        A = K + noise[j] * eye
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            L = np.empty_like(A)
            for b in range(B):
                Lb, jit = _chol_with_jitter(A[b], sf2)
                if Lb is None:
                    return logdet, quad, alpha, chol, jitter, b
                L[b] = Lb
                jitter[b] = max(jitter[b], jit)
        y = _forward(L, D[:, :, j])
        quad[:, j] = np.sum(y * y, axis=1)
        logdet[:, j] = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        alpha[:, :, j] = _backward(L, y)
        if keep_factors:
            chol[:, j] = L
    return logdet, quad, alpha, chol, jitter, -1


def _forward(L, b):
    return _trisolve(L, b, lower=True)


def _backward(L, y):
    return _trisolve(L, y, lower=False)


def _trisolve(L, b, lower):
    B, M = b.shape
    x = np.empty_like(b)
    if lower:
        for i in range(M):
            x[:, i] = (b[:, i] - np.einsum("bk,bk->b", L[:, i, :i], x[:, :i])) / L[:, i, i]
    else:
        for i in range(M - 1, -1, -1):
            x[:, i] = (b[:, i] - np.einsum("bk,bk->b", L[:, i + 1:, i], x[:, i + 1:])) / L[:, i, i]
    return x
