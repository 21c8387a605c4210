"""Linear-algebra helpers shared by the CAVI and EM fitters."""

from __future__ import annotations

import numpy as np

_JITTER = 1e-10


def standardize(X: np.ndarray) -> np.ndarray:
    """Center each column and scale it to unit sample variance.

    Constant columns are centered only.
    """
    Xc = X - X.mean(axis=0, keepdims=True)
    sd = Xc.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    return Xc / sd[None, :]


def sample_spectrum(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending, length p) and leading eigenvectors of X'X/(n-1).

    Uses a thin SVD of X, so the eigenvector matrix has ``min(n, p)``
    columns; eigenvalues beyond the rank are reported as 0.
    """
    n, p = X.shape
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    evals = np.zeros(p)
    evals[: s.size] = s**2 / (n - 1)
    return evals, vt.T


def smallest_eigenvalue(X: np.ndarray) -> float:
    evals, _ = sample_spectrum(X)
    return float(evals[-1])


def default_sigma2(X: np.ndarray) -> float:
    """Smallest eigenvalue of X'X/(n-1), or its smallest nonzero one when rank deficient."""
    evals, _ = sample_spectrum(X)
    tol = max(evals[0], 1.0) * 1e-10
    pos = evals[evals > tol]
    return float(pos[-1]) if pos.size else 1.0


def pca_loadings(X: np.ndarray, r: int, sigma2: float, eps: float = 1e-6) -> np.ndarray:
    """Top-r eigenvectors scaled by sqrt(max(eigval - sigma2, eps))."""
    evals, vecs = sample_spectrum(X)
    scale = np.sqrt(np.maximum(evals[:r] - sigma2, eps))
    return sign_fix(vecs[:, :r] * scale[None, :])[0]


def sign_fix(M: np.ndarray, A: np.ndarray | None = None):
    """Flip columns of M so each column's largest-magnitude entry is positive.

    If ``A`` is given, the matching rows of ``A`` are flipped too, which keeps
    ``M @ A`` unchanged.
    """
    M = M.copy()
    idx = np.argmax(np.abs(M), axis=0)
    signs = np.sign(M[idx, np.arange(M.shape[1])])
    signs[signs == 0] = 1.0
    M *= signs[None, :]
    if A is not None:
        A = A * signs[:, None]
    return M, A


def cholesky_lower(D: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; retries once with a 1e-10 jitter."""
    try:
        return np.linalg.cholesky(D)
    except np.linalg.LinAlgError:
        try:
            return np.linalg.cholesky(D + _JITTER * np.eye(D.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"expansion matrix is not positive definite (min eigenvalue "
                f"{np.linalg.eigvalsh(D).min():.3e})") from exc


def undo_expansion(expanded: np.ndarray, d_mat: np.ndarray):
    """Map expanded-space loadings back to orthogonal-column loadings.

    ``u = expanded @ D_L``; the SVD ``u = W S V'`` gives the rotation
    ``A = V'`` and the loadings ``W S`` (so ``loadings @ A == u``), with the
    column sign convention of :func:`sign_fix`.

    Returns ``(loadings, A, D_L)``.
    """
    d_l = cholesky_lower(d_mat)
    u = expanded @ d_l
    w, s, vt = np.linalg.svd(u, full_matrices=False)
    loadings, A = sign_fix(w * s[None, :], vt)
    return loadings, A, d_l


def rotate_covariances(blocks: np.ndarray, d_l: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Row covariances in original space, given expanded-space ones.

    Rows transform as ``mu_j = u_tilde_j @ D_L @ A'``, so each block becomes
    ``T' Xi_j T`` with ``T = D_L @ A'``.
    """
    T = d_l @ A.T
    return np.einsum("ka,jkl,lb->jab", T, blocks, T, optimize=True)


def outer_change(A: np.ndarray, B: np.ndarray) -> float:
    """``||A A' - B B'||_F`` via r x r Gram products."""
    val = (np.linalg.norm(A.T @ A) ** 2 + np.linalg.norm(B.T @ B) ** 2
           - 2.0 * np.linalg.norm(A.T @ B) ** 2)
    return float(np.sqrt(max(val, 0.0)))


def logistic(h):
    h = np.clip(h, -500.0, 500.0)
    return 1.0 / (1.0 + np.exp(-h))


def sym_inv(M: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix, symmetrized."""
    c = np.linalg.cholesky(M)
    ci = np.linalg.solve(c, np.eye(M.shape[0]))
    return ci.T @ ci
