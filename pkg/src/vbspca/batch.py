"""Variational sparse PCA with entrywise (not row-joint) spike-and-slab inclusion.

Normal slab only. The E-step and the expansion recovery are shared with
:mod:`vbspca.cavi`; what changes is that every loading entry carries its own
inclusion probability, and that those probabilities are recomputed in the
original (unexpanded) coordinates after each recovery, because the
expansion mixes coordinates within a row.
"""

from __future__ import annotations

import math

import numpy as np

from . import linalg
from .cavi import FitError, _check_finite, check_rank, latent_moments
from .types import BatchVariationalState, EStepStats, FitResult, Hyperparameters, Slab, as_array


def e_step(X, state: BatchVariationalState) -> EStepStats:
    """Latent-score moments under entrywise mixture loadings.

    E[theta_jk theta_jl] is ``m_jk m_jl`` off the diagonal and
    ``z_jk (mu_jk^2 + sigma2 psi_jk)`` on it, with ``m = z * mu``.
    """
    X = as_array(X)
    z = state.z_theta
    m = z * state.mu
    second = m.T @ m
    diag = np.sum(z * (state.mu**2 + state.sigma2 * state.psi), axis=0)
    second[np.diag_indices_from(second)] = diag
    return latent_moments(X, m, second, state.sigma2)


def shared_row_inverse(stats: EStepStats, lambda1: float) -> np.ndarray:
    r = stats.h_sum.shape[0]
    return linalg.sym_inv(stats.h_sum + lambda1 * np.eye(r))


def batch_update_rows(stats: EStepStats, hp: Hyperparameters):
    """All rows at once: means (p x r) and variances (p x r).

    The system matrix does not depend on the row, so it is inverted once.
    """
    inv = shared_row_inverse(stats, hp.lambda1)
    u = stats.xw @ inv
    psi = np.broadcast_to(np.diag(inv), u.shape).copy()
    return u, psi


def batch_update_row(j: int, stats: EStepStats, hp: Hyperparameters):
    r = stats.h_sum.shape[0]
    A = stats.h_sum + hp.lambda1 * np.eye(r)
    u = np.linalg.solve(A, stats.xw[j])
    psi = np.diag(linalg.sym_inv(A)).copy()
    return u, psi


def entry_logits(u, psi, xw, H, hp: Hyperparameters, sigma2: float) -> np.ndarray:
    """Entrywise inclusion logits (p x r).

    The data term for entry k of row j is read as
    ``-2 xw_jk u_jk + u_jk (u_j H)_k + sigma2 psi_jk H_kk``: the printed
    ``u_j' o omega_i`` only makes sense as a pointwise product of two
    r-vectors, and ``Diag(u_j' u_j H_i)`` as the diagonal of the r x r
    matrix ``outer(u_j, u_j) @ H_i``, summed over i.
    """
    u = np.atleast_2d(u)
    psi = np.atleast_2d(psi)
    xw = np.atleast_2d(xw)
    lam = hp.lambda1
    data = -2.0 * xw * u + u * (u @ H) + sigma2 * psi * np.diag(H)[None, :]
    const = math.log(hp.alpha1 / hp.alpha2) + 0.5 + 0.5 * math.log(lam)
    return (-data / (2.0 * sigma2) + const + 0.5 * np.log(psi)
            - lam / (2.0 * sigma2) * u**2 - 0.5 * lam * psi)


def batch_update_h(j: int, row, stats: EStepStats, hp: Hyperparameters, sigma2: float) -> np.ndarray:
    u, psi = row
    h = entry_logits(u, psi, stats.xw[j], stats.h_sum, hp, sigma2)[0]
    return np.clip(h, -500.0, 500.0)


def batch_update_sigma2(X, z, u_tilde, stats: EStepStats, hp: Hyperparameters) -> float:
    """Noise variance with ``m_j = z_j o u_j`` plugged in for each row."""
    X = as_array(X)
    n, p = X.shape
    m = z * u_tilde
    quad = np.einsum("jk,kl,jl->", m, stats.h_sum, m)
    cross = np.sum(m * stats.xw)
    ridge = hp.lambda1 * np.sum(m * m)
    num = np.sum(X * X) + quad - 2.0 * cross + ridge + 2.0 * hp.sigma_b
    return float(num / (n * p + 2.0 * (hp.sigma_a + 1.0)))


def recover(u_tilde, psi_tilde, stats: EStepStats, n: int):
    """Original-space means and entry variances plus the frame change.

    Returns ``(mu, psi, A, d_l, d_mat)``; ``psi`` is the diagonal of the
    rotated covariance ``diag(psi_tilde_j)``.
    """
    d_mat = stats.h_sum / n
    mu, A, d_l = linalg.undo_expansion(u_tilde, d_mat)
    r = u_tilde.shape[1]
    blocks = np.einsum("jk,kl->jkl", psi_tilde, np.eye(r))
    psi = np.diagonal(linalg.rotate_covariances(blocks, d_l, A), axis1=1, axis2=2).copy()
    return mu, psi, A, d_l, d_mat


def original_frame_stats(stats: EStepStats, A: np.ndarray, d_l: np.ndarray):
    """``(xw, H)`` expressed in the coordinates of the recovered means.

    With ``mu = u_tilde @ D_L @ A'``, the bilinear forms in the logits are
    preserved by ``xw -> xw D_L^{-T} A'`` and ``H -> A D_L^{-1} H D_L^{-T} A'``.
    """
    inv_l = np.linalg.solve(d_l, np.eye(d_l.shape[0]))
    T = inv_l.T @ A.T
    return stats.xw @ T, T.T @ stats.h_sum @ T


def recover_z_theta(state: BatchVariationalState, stats: EStepStats, hp: Hyperparameters,
                    A: np.ndarray, d_l: np.ndarray) -> np.ndarray:
    xw, H = original_frame_stats(stats, A, d_l)
    h = entry_logits(state.mu, state.psi, xw, H, hp, state.sigma2)
    return linalg.logistic(np.clip(h, -500.0, 500.0))


def initial_state(X: np.ndarray, r: int, hp: Hyperparameters) -> BatchVariationalState:
    p = X.shape[1]
    sigma2 = hp.sigma2_init if hp.sigma2_init is not None else linalg.default_sigma2(X)
    mu = linalg.pca_loadings(X, r, sigma2)
    psi = np.full((p, r), hp.xi_init)
    ones = np.ones((p, r))
    return BatchVariationalState(mu=mu, psi=psi, u_tilde=mu.copy(), psi_tilde=psi.copy(),
                                 z=ones, z_theta=ones.copy(), h=np.full((p, r), 500.0),
                                 sigma2=float(sigma2), d_mat=np.eye(r), iteration=0)


def fit_batch_px_cavi(X, r: int, hp: Hyperparameters | None = None,
                      init: BatchVariationalState | None = None) -> FitResult:
    X = as_array(X)
    n, p = X.shape
    check_rank(X, r)
    hp = (hp or Hyperparameters()).resolve(p)
    if hp.slab is not Slab.NORMAL:
        raise ValueError("the entrywise fit supports the normal slab only")
    state = init if init is not None else initial_state(X, r, hp)
    trace: list[float] = []
    done = False
    t = 0
    for t in range(hp.max_iter):
        sigma2 = state.sigma2
        stats = e_step(X, state)
        u_t, psi_t = batch_update_rows(stats, hp)
        h = np.clip(entry_logits(u_t, psi_t, stats.xw, stats.h_sum, hp, sigma2), -500.0, 500.0)
        z = linalg.logistic(h)
        if hp.estimate_sigma2:
            sigma2 = batch_update_sigma2(X, z, u_t, stats, hp)
        mu, psi, A, d_l, d_mat = recover(u_t, psi_t, stats, n)
        new = BatchVariationalState(mu=mu, psi=psi, u_tilde=u_t, psi_tilde=psi_t, z=z,
                                    z_theta=state.z_theta, h=h, sigma2=float(sigma2),
                                    d_mat=d_mat, iteration=t + 1)
        new.z_theta = recover_z_theta(new, stats, hp, A, d_l)
        _check_finite(t, mu=mu, z_theta=new.z_theta, sigma2=np.array(sigma2))
        delta_t = max(linalg.outer_change(mu, state.mu),
                      float(np.sum(np.abs(new.z_theta - state.z_theta))))
        trace.append(delta_t)
        state = new
        if delta_t <= hp.delta:
            done = True
            break
    zt = state.z_theta
    result = FitResult(
        algorithm="batch_px_cavi", loadings=zt * state.mu, inclusion=zt.copy(),
        support=np.flatnonzero(zt.ravel() > hp.inclusion_threshold), sigma2=state.sigma2,
        iterations=t + 1, converged=done, trace=trace,
    )
    result.state = state
    return result


__all__ = [
    "FitError", "e_step", "batch_update_row", "batch_update_rows", "batch_update_h",
    "batch_update_sigma2", "recover_z_theta", "fit_batch_px_cavi", "entry_logits",
]
