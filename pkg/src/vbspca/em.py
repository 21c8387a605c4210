"""MAP sparse PCA under a continuous spike-and-slab prior via parameter-expanded EM.

Each iteration takes expectations over the latent scores and the row
indicators (tempered), solves one small penalized least-squares problem per
row in the expanded parametrization, then maps back to orthogonal-column
loadings. A path over increasing spike rates provides the starting point.

Conventions
-----------
With ``M = sum_i omega_i omega_i' + n V_w = M_L M_L'`` and
``c_j = sum_i omega_i X_ij``, each row solves

    min_b  (1/2 sigma2) ||M_L' b - d_j||^2 + pen_j ||b||_q,   d_j = M_L^{-1} c_j,

which equals ``(1/2 sigma2)(b' M b - 2 b' c_j) + const``, the expected
complete-data residual. The expanded loadings map back through
``theta A = beta_tilde D_L`` with ``D = M / n``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular

from . import linalg
from .cavi import FitError, _check_finite, check_rank, latent_moments
from .types import EmNorm, EmState, EStepStats, FitResult, Hyperparameters, as_array

MAX_SWEEPS = 500


def row_norms(theta: np.ndarray, norm: EmNorm) -> np.ndarray:
    if norm is EmNorm.L1:
        return np.sum(np.abs(theta), axis=1)
    return np.linalg.norm(theta, axis=1)


def tempered_gamma(theta, kappa: float, lambda0: float, lambda1: float, iota: float,
                   norm: EmNorm = EmNorm.L1) -> np.ndarray:
    """Tempered responsibilities, computed on the logit scale."""
    logit = (lambda0 - lambda1) * row_norms(np.atleast_2d(theta), norm) + math.log(kappa / (1.0 - kappa))
    return linalg.logistic(iota * logit)


def em_e_step(X, state: EmState, hp: Hyperparameters):
    """Latent-score moments and tempered responsibilities at ``state.theta``.

    Returns ``(stats, gamma_tilde)``; ``stats.h_sum`` is ``M`` and
    ``stats.xw`` stacks the ``c_j``.
    """
    X = as_array(X)
    theta = state.theta
    stats = latent_moments(X, theta, theta.T @ theta, state.sigma2)
    gamma = tempered_gamma(theta, state.kappa, hp.lambda0, hp.lambda1, hp.iota, hp.em_norm)
    return stats, gamma


def penalties(gamma, hp: Hyperparameters) -> np.ndarray:
    return gamma * hp.lambda1 + (1.0 - gamma) * hp.lambda0


def _lasso_rows(M, C, tau, b0=None, tol=1e-12, max_sweeps=MAX_SWEEPS):
    """Coordinate descent for ``min_b 0.5 b'Mb - b'c + tau |b|_1`` on every row at once."""
    p, r = C.shape
    B = np.zeros((p, r)) if b0 is None else np.array(b0, dtype=float)
    tau = np.broadcast_to(np.ravel(np.asarray(tau, dtype=float)), (p,))
    diag = np.diag(M)
    ok = False
    for _ in range(max_sweeps):
        biggest = 0.0
        for k in range(r):
            # partial residual excluding coordinate k
            g = C[:, k] - B @ M[:, k] + B[:, k] * diag[k]
            new = np.sign(g) * np.maximum(np.abs(g) - tau, 0.0) / diag[k]
            biggest = max(biggest, float(np.max(np.abs(new - B[:, k]), initial=0.0)))
            B[:, k] = new
        if biggest <= tol * max(1.0, float(np.max(np.abs(B), initial=0.0))):
            ok = True
            break
    return B, ok


def _group_rows(M, C, tau, tol=1e-13, max_iter=100):
    """Group soft-thresholding: ``min_b 0.5 b'Mb - b'c + tau ||b||_2`` per row.

    Nonzero solutions satisfy ``(M + (tau/rho) I) b = c`` with ``rho = ||b||``,
    i.e. ``sum_k chat_k^2 / (l_k rho + tau)^2 = 1`` in the eigenbasis of M.
    Newton runs on ``1/sqrt(phi(rho)) - 1``, which is exactly linear when
    r = 1, with bisection as a safeguard.
    """
    p, r = C.shape
    lam, Q = np.linalg.eigh(M)
    chat = C @ Q
    cn = np.linalg.norm(C, axis=1)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (p,))
    active = cn > tau
    B = np.zeros((p, r))
    if not np.any(active):
        return B, True
    ch = chat[active]
    t = tau[active][:, None]
    lo = np.zeros(ch.shape[0])
    hi = cn[active] / lam[0]
    rho = 0.5 * hi

    def psi(x):
        den = lam[None, :] * x[:, None] + t
        phi = np.sum(ch**2 / den**2, axis=1)
        dphi = -2.0 * np.sum(ch**2 * lam[None, :] / den**3, axis=1)
        f = 1.0 / np.sqrt(phi) - 1.0
        return f, -0.5 * phi ** -1.5 * dphi

    ok = False
    for _ in range(max_iter):
        f, df = psi(rho)
        # psi is increasing in rho
        lo = np.where(f < 0, rho, lo)
        hi = np.where(f > 0, rho, hi)
        step = rho - f / df
        bad = ~((step > lo) & (step < hi)) | ~np.isfinite(step)
        new = np.where(bad, 0.5 * (lo + hi), step)
        if np.all(np.abs(new - rho) <= tol * np.maximum(new, 1e-300)):
            rho = new
            ok = True
            break
        rho = new
    bhat = ch / (lam[None, :] + t / rho[:, None])
    B[active] = bhat @ Q.T
    return B, ok


def em_m_step_rows(stats: EStepStats, m_l, gamma, sigma2: float, hp: Hyperparameters,
                   b0=None):
    """Expanded-space rows for all j. Returns ``(beta_tilde, converged)``."""
    tau = sigma2 * penalties(gamma, hp)
    M = m_l @ m_l.T
    C = stats.xw
    if hp.em_norm is EmNorm.L1:
        return _lasso_rows(M, C, tau, b0)
    return _group_rows(M, C, tau)


def em_m_step_row(j: int, m_l, d_j, pen_j: float, sigma2: float, norm) -> np.ndarray:
    """One expanded-space row; ``d_j = M_L^{-1} c_j``."""
    norm = EmNorm(norm)
    m_l = np.atleast_2d(np.asarray(m_l, dtype=float))
    d_j = np.atleast_1d(np.asarray(d_j, dtype=float))
    M = m_l @ m_l.T
    c = (m_l @ d_j)[None, :]
    tau = np.array([sigma2 * pen_j])
    if norm is EmNorm.L1:
        b, ok = _lasso_rows(M, c, tau)
    else:
        b, ok = _group_rows(M, c, tau)
    if not ok:
        raise FitError(f"row {j}: inner solver did not converge in {MAX_SWEEPS} sweeps")
    return b[0]


def em_update_kappa(gamma_tilde, hp: Hyperparameters) -> float:
    p = np.size(gamma_tilde)
    alpha2 = hp.alpha2 if hp.alpha2 is not None else p + 1.0
    den = p + hp.alpha1 + alpha2 - 2.0
    if den <= 0:
        raise ValueError("kappa update has a nonpositive denominator")
    k = (hp.alpha1 + float(np.sum(gamma_tilde)) - 1.0) / den
    return float(min(max(k, 1e-12), 1.0 - 1e-12))


def residual_term(X_sq: float, beta, stats: EStepStats) -> float:
    """``E||X - beta w||^2`` summed over samples, given the E-step moments."""
    quad = np.einsum("jk,kl,jl->", beta, stats.h_sum, beta)
    return float(X_sq - 2.0 * np.sum(beta * stats.xw) + quad)


def em_update_sigma2(X, beta, stats: EStepStats, hp: Hyperparameters):
    """Noise variance. Returns ``(sigma2, floored)``.

    The quadratic forms are evaluated at the expanded rows, whose frame
    matches the E-step moments ``M`` and ``c_j``.
    """
    X = as_array(X)
    n, p = X.shape
    val = (residual_term(float(np.sum(X * X)), beta, stats) + 2.0 * hp.sigma_b) / (
        n * p + 2.0 * (hp.sigma_a + 1.0))
    if not val > 0:
        return 1e-10, True
    return float(val), False


def em_objective(stats: EStepStats, m_l, beta, gamma, kappa: float, sigma2: float,
                 hp: Hyperparameters) -> float:
    """Expected complete-data log posterior, up to a constant."""
    d = solve_triangular(m_l, stats.xw.T, lower=True).T
    resid = d - beta @ m_l
    fit = float(np.sum(resid * resid)) / (2.0 * sigma2)
    pen = float(np.sum(penalties(gamma, hp) * row_norms(beta, hp.em_norm)))
    p = gamma.size
    g1 = float(np.sum(gamma))
    alpha2 = hp.alpha2 if hp.alpha2 is not None else p + 1.0
    prior = (g1 + hp.alpha1 - 1.0) * math.log(kappa) + (p - g1 + alpha2 - 1.0) * math.log1p(-kappa)
    return -fit - pen + prior


def log_likelihood(X, theta, sigma2: float) -> float:
    """Marginal Gaussian log-likelihood of the rows of X under ``theta theta' + sigma2 I``."""
    X = as_array(X)
    n, p = X.shape
    r = theta.shape[1]
    K = theta.T @ theta / sigma2 + np.eye(r)
    logdet = p * math.log(sigma2) + np.linalg.slogdet(K)[1]
    xt = X @ theta
    quad = (np.sum(X * X) - np.sum(xt * np.linalg.solve(K, xt.T).T) / sigma2) / sigma2
    return -0.5 * (n * logdet + quad + n * p * math.log(2.0 * math.pi))


def em_log_posterior(X, state: EmState, hp: Hyperparameters, expanded: bool = False) -> float:
    """The function the tempered EM ascends, up to a constant.

    ``loglik(theta) + (1/iota) sum_j log(kappa^iota a_j^iota + (1-kappa)^iota b_j^iota)``
    plus the Beta log-density of kappa, with ``a_j, b_j`` as in the E-step.
    The tempered E-step is the Jensen minorizer of this function, so it is
    the quantity each iteration cannot decrease (unlike the sequence of Q
    values, each of which is built from a different E-step).

    With ``expanded=True`` the prior is evaluated at the expanded rows
    ``state.beta_tilde`` instead of ``state.theta``. That is the value the
    M-step is guaranteed to reach: the ascent holds in the expanded model,
    and mapping back to ``theta`` changes the prior term (neither norm is
    invariant under ``D_L``), so the plain sequence can dip slightly.
    """
    k, iota = state.kappa, hp.iota
    rows = state.beta_tilde if expanded else state.theta
    norms = row_norms(rows, hp.em_norm)
    a = iota * (math.log(k) - hp.lambda1 * norms)
    b = iota * (math.log1p(-k) - hp.lambda0 * norms)
    mix = float(np.sum(np.logaddexp(a, b))) / iota
    alpha2 = hp.alpha2 if hp.alpha2 is not None else state.theta.shape[0] + 1.0
    prior = (hp.alpha1 - 1.0) * math.log(k) + (alpha2 - 1.0) * math.log1p(-k)
    if hp.estimate_sigma2:
        # inverse-gamma(sigma_a, sigma_b) on sigma2; a constant when sigma2 is held fixed
        prior -= (hp.sigma_a + 1.0) * math.log(state.sigma2) + hp.sigma_b / state.sigma2
    return log_likelihood(X, state.theta, state.sigma2) + mix + prior


def recover_theta_em(beta, m_mat, n: int):
    """``(theta, U, A, D)`` with ``theta A = beta D_L`` and ``D = M / n``."""
    d_mat = m_mat / n
    theta, A, d_l = linalg.undo_expansion(beta, d_mat)
    # rows zeroed by the M-step stay exactly zero (the SVD leaves ~1e-17 residue)
    theta[~np.any(beta != 0, axis=1)] = 0.0
    norms = np.linalg.norm(theta, axis=0)
    U = np.where(norms[None, :] > 0, theta / np.where(norms > 0, norms, 1.0)[None, :], 0.0)
    return theta, U, A, d_mat


def _flag(flags: list, name: str):
    if name not in flags:
        flags.append(name)


def _run(X, state: EmState, hp: Hyperparameters, flags: list, callback=None):
    """EM loop at fixed (lambda0, iota). Returns ``(state, iterations, converged, trace)``.

    ``callback(state)`` is called after every iteration.
    """
    n = X.shape[0]
    trace: list[float] = []
    beta = state.beta_tilde
    prev_q = None
    t = 0
    for t in range(hp.max_iter):
        stats, gamma = em_e_step(X, state, hp)
        m_l = linalg.cholesky_lower(stats.h_sum)
        beta, ok = em_m_step_rows(stats, m_l, gamma, state.sigma2, hp, b0=beta)
        if not ok:
            _flag(flags, "inner_nonconvergence")
        kappa = em_update_kappa(gamma, hp)
        theta, _, _, _ = recover_theta_em(beta, stats.h_sum, n)
        sigma2 = state.sigma2
        if hp.estimate_sigma2:
            sigma2, floored = em_update_sigma2(X, beta, stats, hp)
            if floored:
                _flag(flags, "sigma2_floored")
        q = em_objective(stats, m_l, beta, gamma, kappa, sigma2, hp)
        _check_finite(t, theta=theta, objective=np.array(q))
        d_vecs = solve_triangular(m_l, stats.xw.T, lower=True).T
        state = EmState(theta=theta, gamma_tilde=gamma, kappa=kappa, sigma2=float(sigma2),
                        m_mat=stats.h_sum, m_l=m_l, d_vecs=d_vecs, objective=q, beta_tilde=beta)
        trace.append(q)
        if callback is not None:
            callback(state)
        if prev_q is not None and abs(q - prev_q) / (abs(prev_q) + 1.0) <= hp.delta:
            return state, t + 1, True, trace
        prev_q = q
    return state, t + 1, False, trace


def initial_state(X: np.ndarray, r: int, hp: Hyperparameters) -> EmState:
    p = X.shape[1]
    sigma2 = hp.sigma2_init if hp.sigma2_init is not None else linalg.default_sigma2(X)
    theta = linalg.pca_loadings(X, r, sigma2)
    kappa = 0.5
    return EmState(theta=theta, gamma_tilde=np.full(p, kappa), kappa=kappa, sigma2=float(sigma2),
                   m_mat=np.eye(r), m_l=np.eye(r), d_vecs=np.zeros((p, r)))


def lambda0_grid(X, hp: Hyperparameters) -> np.ndarray:
    """Geometric spike-rate grid from ``lambda1 + 2 sqrt(rho_min)`` to ``p^2 log p``.

    ``rho_min`` is the smallest nonzero eigenvalue of X'X/(n-1); when p > n
    the smallest one is exactly zero and would start the path at lambda1.
    """
    p = X.shape[1]
    rho_min = linalg.default_sigma2(X)
    start = hp.lambda1 + 2.0 * math.sqrt(max(rho_min, 0.0))
    stop = p**2 * math.log(p)
    if stop <= start:
        return np.full(hp.path_stages, start)
    return np.geomspace(start, stop, hp.path_stages)


def path_following_init(X, r: int, hp: Hyperparameters | None = None, flags: list | None = None,
                        history: list | None = None, callback=None) -> EmState:
    """Warm-started EM runs over an increasing grid of spike rates.

    ``history`` (if given) receives one dict per stage; ``callback(stage, hp, state)``
    is called after every iteration.
    """
    X = as_array(X)
    hp = (hp or Hyperparameters()).resolve(X.shape[1])
    if hp.path_stages < 2:
        raise ValueError("path following needs at least 2 stages")
    flags = [] if flags is None else flags
    state = initial_state(X, r, hp)
    for i, lam0 in enumerate(lambda0_grid(X, hp)):
        stage_hp = hp.with_overrides(lambda0=float(lam0))
        cb = None if callback is None else (lambda st, i=i, h=stage_hp: callback(i, h, st))
        try:
            state, its, ok, trace = _run(X, state, stage_hp, flags, cb)
        except FitError as exc:
            raise FitError(f"path stage {i + 1}: {exc}") from exc
        if history is not None:
            history.append({"lambda0": float(lam0), "iterations": its, "converged": ok,
                            "trace": trace})
    return state


def fit_px_em(X, r: int, hp: Hyperparameters | None = None, init: EmState | None = None) -> FitResult:
    X = as_array(X)
    n, p = X.shape
    check_rank(X, r)
    hp = (hp or Hyperparameters()).resolve(p)
    flags: list[str] = []
    state = init if init is not None else path_following_init(X, r, hp, flags)
    state, its, ok, trace = _run(X, state, hp, flags)
    gamma = state.gamma_tilde
    result = FitResult(
        algorithm=f"px_em_{hp.em_norm.value}", loadings=state.theta.copy(), inclusion=gamma.copy(),
        support=np.flatnonzero(gamma > hp.inclusion_threshold), sigma2=state.sigma2,
        iterations=its, converged=ok, trace=trace, flags=flags,
    )
    result.state = state
    return result


def fit_pca(X, r: int, hp: Hyperparameters | None = None) -> FitResult:
    """Conventional PCA baseline: top-r eigenvectors, every row selected."""
    X = as_array(X)
    n, p = X.shape
    check_rank(X, r)
    _, vecs = linalg.sample_spectrum(X)
    U = linalg.sign_fix(vecs[:, :r])[0]
    return FitResult(algorithm="pca", loadings=U, inclusion=np.ones(p), support=np.arange(p),
                     sigma2=linalg.default_sigma2(X), iterations=0, converged=True, trace=[])
