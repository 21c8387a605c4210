"""Coordinate-ascent variational inference for jointly row-sparse PCA.

Each iteration runs, in order: the E-step for the latent scores, the row
updates of the expanded-space variational parameters, the inclusion
logits, the noise variance, and finally the undoing of both parameter
expansions (Cholesky of the score second moment, then an SVD that restores
column orthogonality).

The row updates depend only on the shared :class:`EStepStats`, so all ``p``
rows are updated at once with array operations.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy import optimize, special

from . import linalg
from .special import folded_normal_mean, normal_pdf
from .types import EStepStats, FitResult, Hyperparameters, Slab, VariationalState, as_array

log = logging.getLogger(__name__)

LAPLACE_TOL = 1e-8
LAPLACE_MAX_SWEEPS = 200


class FitError(RuntimeError):
    """Raised when a fit produces non-finite values."""


# -- E-step ------------------------------------------------------------------

def latent_moments(X: np.ndarray, mean_rows: np.ndarray, second_moment: np.ndarray,
                   sigma2: float) -> EStepStats:
    """Gaussian moments of the latent scores given plug-in loading moments.

    ``mean_rows`` is E[theta] (p x r) and ``second_moment`` is
    sum_j E[theta_j' theta_j] (r x r).
    """
    r = mean_rows.shape[1]
    prec = second_moment / sigma2 + np.eye(r)
    if not np.all(np.isfinite(prec)):
        raise FitError("non-finite latent precision matrix")
    try:
        v_w = linalg.sym_inv(prec)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"latent precision is singular (condition {np.linalg.cond(prec):.3e})") from exc
    omega = X @ mean_rows @ v_w / sigma2
    n = X.shape[0]
    h_sum = omega.T @ omega + n * v_w
    return EStepStats(omega_tilde=omega, v_w=v_w, h_sum=h_sum, xw=X.T @ omega)


def e_step(X, state: VariationalState) -> EStepStats:
    X = as_array(X)
    z = state.z
    mean_rows = z[:, None] * state.mu
    second = state.mu.T @ mean_rows + state.sigma2 * np.einsum("j,jkl->kl", z, state.xi)
    return latent_moments(X, mean_rows, second, state.sigma2)


# -- row updates -------------------------------------------------------------

def update_rows_normal(stats: EStepStats, lambda1: float):
    """Expanded-space means (p x r) and the shared covariance (r x r), normal slab."""
    r = stats.h_sum.shape[0]
    xi_tilde = linalg.sym_inv(stats.h_sum + lambda1 * np.eye(r))
    return stats.xw @ xi_tilde, xi_tilde


def update_row_normal(j: int, stats: EStepStats, hp: Hyperparameters, sigma2: float | None = None):
    r = stats.h_sum.shape[0]
    xi_tilde = linalg.sym_inv(stats.h_sum + hp.lambda1 * np.eye(r))
    return xi_tilde @ stats.xw[j], xi_tilde


def _bracketed_newton(fun, lo, hi, x0, tol, maxiter=200):
    """Vectorized safeguarded Newton for roots of increasing-through-zero functions.

    ``fun(x)`` returns ``(g, dg)``; requires ``g(lo) <= 0 <= g(hi)``
    elementwise. Newton steps leaving the current bracket are replaced by
    bisection. Returns ``(x, converged_mask)``.
    """
    lo = lo.copy()
    hi = hi.copy()
    x = np.clip(x0, lo, hi)
    done = np.zeros(x.shape, dtype=bool)
    for _ in range(maxiter):
        g, dg = fun(x)
        done = (np.abs(g) <= tol) | (hi - lo <= 1e-15 * np.maximum(np.abs(x), 1e-300))
        if done.all():
            break
        neg = g < 0
        lo = np.where(neg & ~done, x, lo)
        hi = np.where(~neg & ~done, x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - g / dg
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi) | (dg <= 0)
        step = np.where(bad, 0.5 * (lo + hi), step)
        x = np.where(done, x, step)
    return x, done


def laplace_objective(u, s, xw, H, lambda1, sigma2):
    """Row objective minimized by the Laplace-slab update (diagonal covariance).

    ``u``/``s``/``xw`` may be single rows (r,) or stacked (p, r).
    """
    u = np.atleast_2d(u)
    s = np.atleast_2d(s)
    xw = np.atleast_2d(xw)
    quad = np.einsum("jk,kl,jl->j", u, H, u) - 2.0 * np.sum(u * xw, axis=1)
    val = (quad / (2.0 * sigma2) + 0.5 * s @ np.diag(H) - 0.5 * np.sum(np.log(s), axis=1)
           + lambda1 * np.sum(folded_normal_mean(u, sigma2 * s), axis=1))
    return val


def laplace_gradient(u, s, xw, H, lambda1, sigma2):
    """Gradient of :func:`laplace_objective` in ``(u, s)``."""
    sd = np.sqrt(sigma2 * s)
    gu = (u @ H - xw) / sigma2 + lambda1 * special.erf(u / (np.sqrt(2.0) * sd))
    gs = 0.5 * np.diag(H)[None, :] - 0.5 / s + lambda1 * sigma2 * normal_pdf(u / sd) / sd
    return gu, gs


def update_rows_laplace(stats: EStepStats, lambda1: float, sigma2: float,
                        u0: np.ndarray, s0: np.ndarray,
                        tol: float = LAPLACE_TOL, max_sweeps: int = LAPLACE_MAX_SWEEPS):
    """Joint stationary point of the Laplace-slab row objective, all rows at once.

    Cyclic coordinate descent over the r means and r diagonal variances of
    each row; each coordinate is a 1-D root find. Returns
    ``(u_tilde, s_diag, converged)``.
    """
    H = stats.h_sum
    xw = stats.xw
    hd = np.diag(H)
    r = H.shape[0]
    U = np.array(u0, dtype=float, copy=True)
    S = np.maximum(np.array(s0, dtype=float, copy=True), 1e-12)
    c = lambda1 * math.sqrt(sigma2) / math.sqrt(2.0 * math.pi)
    s_lo = 1.0 / (c + np.sqrt(c * c + hd)) ** 2
    s_hi = 1.0 / hd
    converged = False
    for _ in range(max_sweeps):
        for k in range(r):
            b = U @ H[:, k] - U[:, k] * H[k, k]
            target = xw[:, k] - b
            sk = S[:, k]

            def gu(x, sk=sk, target=target, k=k):
                sd = np.sqrt(sigma2 * sk)
                g = (hd[k] * x - target) / sigma2 + lambda1 * special.erf(x / (np.sqrt(2.0) * sd))
                dg = hd[k] / sigma2 + lambda1 * 2.0 * normal_pdf(x / sd) / sd
                return g, dg

            lo = (target - lambda1 * sigma2) / hd[k]
            hi = (target + lambda1 * sigma2) / hd[k]
            U[:, k], _ = _bracketed_newton(gu, lo, hi, U[:, k], tol * 1e-2)

            uk = U[:, k]

            def gs(x, uk=uk, k=k):
                sd = np.sqrt(sigma2 * x)
                a = uk / sd
                phi = normal_pdf(a)
                g = 0.5 * hd[k] - 0.5 / x + lambda1 * sigma2 * phi / sd
                dg = 0.5 / x**2 + lambda1 * sigma2 * phi / sd * (a * a / (2.0 * x) - 1.0 / (2.0 * x))
                return g, dg

            lo_s = np.full(U.shape[0], s_lo[k])
            hi_s = np.full(U.shape[0], s_hi[k])
            S[:, k], _ = _bracketed_newton(gs, lo_s, hi_s, np.clip(S[:, k], s_lo[k], s_hi[k]), tol * 1e-2)
        g_u, g_s = laplace_gradient(U, S, xw, H, lambda1, sigma2)
        if max(np.max(np.abs(g_u)), np.max(np.abs(g_s))) < tol:
            converged = True
            break
    return U, S, converged


def update_row_laplace(j: int, stats: EStepStats, hp: Hyperparameters, sigma2: float,
                       warm_start=None):
    """Single-row version of :func:`update_rows_laplace`; returns ``(u, s_diag)``."""
    r = stats.h_sum.shape[0]
    if warm_start is None:
        u0, s0 = np.zeros(r), 1.0 / np.diag(stats.h_sum)
    else:
        u0, s0 = warm_start
    one = EStepStats(stats.omega_tilde, stats.v_w, stats.h_sum, stats.xw[j:j + 1])
    U, S, ok = update_rows_laplace(one, hp.lambda1, sigma2, np.atleast_2d(u0), np.atleast_2d(s0))
    if not ok:
        log.warning("Laplace row update for row %d did not converge", j)
    return U[0], S[0]


# -- inclusion logits --------------------------------------------------------

def _data_fit(u_tilde, xw, H, sigma2):
    """-(1/(2 sigma2)) sum_i (u H_i u' - 2 X_ij u omega_i), per row."""
    quad = np.einsum("jk,kl,jl->j", u_tilde, H, u_tilde)
    return -(quad - 2.0 * np.sum(u_tilde * xw, axis=1)) / (2.0 * sigma2)


def logits_normal(stats: EStepStats, u_tilde, xi_tilde, hp: Hyperparameters, sigma2: float):
    """Inclusion logits under the normal slab N(0, sigma2/lambda1 I).

    ``xi_tilde`` is either one shared (r x r) block or stacked (p x r x r).
    """
    H = stats.h_sum
    r = H.shape[0]
    lam = hp.lambda1
    blocks = np.broadcast_to(xi_tilde, (u_tilde.shape[0], r, r))
    _, logdet = np.linalg.slogdet(blocks)
    tr_xi = np.trace(blocks, axis1=1, axis2=2)
    tr_xih = np.einsum("jkl,lk->j", blocks, H)
    sq = np.sum(u_tilde**2, axis=1)
    return (math.log(hp.alpha1 / hp.alpha2) + 0.5 * r * math.log(lam)
            - lam / (2.0 * sigma2) * sq - 0.5 * lam * tr_xi
            + 0.5 * (logdet + r)
            + _data_fit(u_tilde, stats.xw, H, sigma2) - 0.5 * tr_xih)


def logits_laplace(stats: EStepStats, u_tilde, s_diag, hp: Hyperparameters, sigma2: float):
    """Inclusion logits under the product-Laplace slab with diagonal covariance."""
    H = stats.h_sum
    r = H.shape[0]
    lam = hp.lambda1
    fsum = np.sum(folded_normal_mean(u_tilde, sigma2 * s_diag), axis=1)
    logdet = np.sum(np.log(s_diag), axis=1)
    tr_xih = s_diag @ np.diag(H)
    return (math.log(hp.alpha1 / hp.alpha2)
            + r * math.log(math.sqrt(math.pi) * math.sqrt(sigma2) * lam / math.sqrt(2.0))
            - lam * fsum + 0.5 * (logdet + r)
            + _data_fit(u_tilde, stats.xw, H, sigma2) - 0.5 * tr_xih)


def update_h(j: int, row, stats: EStepStats, hp: Hyperparameters, sigma2: float) -> float:
    """Logit for one row; ``row`` is ``(u_tilde_j, xi_tilde_j)`` with a full
    block for the normal slab or a diagonal vector for the Laplace slab."""
    u, cov = row
    u = np.atleast_2d(u)
    one = EStepStats(stats.omega_tilde, stats.v_w, stats.h_sum, stats.xw[j:j + 1])
    if hp.slab is Slab.NORMAL:
        h = logits_normal(one, u, np.asarray(cov), hp, sigma2)
    else:
        h = logits_laplace(one, u, np.atleast_2d(cov), hp, sigma2)
    return float(np.clip(h[0], -500.0, 500.0))


# -- noise variance ----------------------------------------------------------

def _sigma_denominator(n, p, hp):
    return n * p + 2.0 * (hp.sigma_a + 1.0)


def update_sigma2_normal(X, z, u_tilde, stats: EStepStats, hp: Hyperparameters) -> float:
    X = as_array(X)
    n, p = X.shape
    H = stats.h_sum
    quad = np.einsum("jk,kl,jl->j", u_tilde, H, u_tilde)
    cross = np.sum(u_tilde * stats.xw, axis=1)
    ridge = hp.lambda1 * np.sum(u_tilde**2, axis=1)
    num = np.sum(X * X) + np.sum(z * (quad - 2.0 * cross + ridge)) + 2.0 * hp.sigma_b
    return float(num / _sigma_denominator(n, p, hp))


def sigma2_objective_laplace(sigma2, X_sq, n, p, z, u_tilde, s_diag, stats, hp):
    """Negative-ELBO terms that depend on sigma2, Laplace slab."""
    H = stats.h_sum
    r = H.shape[0]
    quad = np.einsum("jk,kl,jl->j", u_tilde, H, u_tilde) - 2.0 * np.sum(u_tilde * stats.xw, axis=1)
    fsum = np.sum(folded_normal_mean(u_tilde, sigma2 * s_diag), axis=1)
    per_row = quad / (2.0 * sigma2) - 0.5 * r * math.log(sigma2) + hp.lambda1 * fsum
    return (np.sum(z * per_row) + 0.5 * (n * p + 2.0 * hp.sigma_a + 2.0) * math.log(sigma2)
            + (X_sq + 2.0 * hp.sigma_b) / (2.0 * sigma2))


def update_sigma2_laplace(X, z, u_tilde, s_diag, stats: EStepStats, hp: Hyperparameters,
                          previous: float | None = None):
    """Bounded 1-D minimization over log(sigma2); returns ``(sigma2, ok)``."""
    X = as_array(X)
    n, p = X.shape
    X_sq = float(np.sum(X * X))
    upper = max(X_sq / n, 1e-6)

    def obj(t):
        return sigma2_objective_laplace(math.exp(t), X_sq, n, p, z, u_tilde, s_diag, stats, hp)

    try:
        res = optimize.minimize_scalar(obj, bounds=(math.log(1e-8), math.log(upper)),
                                       method="bounded", options={"xatol": 1e-10, "maxiter": 500})
    except (ValueError, FloatingPointError):
        res = None
    if res is None or not res.success or not np.isfinite(res.x):
        return (previous if previous is not None else upper), False
    return float(math.exp(res.x)), True


def update_sigma2(X, state: VariationalState, stats: EStepStats, hp: Hyperparameters) -> float:
    if hp.slab is Slab.NORMAL:
        return update_sigma2_normal(X, state.z, state.u_tilde, stats, hp)
    s_diag = np.diagonal(state.xi_tilde, axis1=1, axis2=2)
    return update_sigma2_laplace(X, state.z, state.u_tilde, s_diag, stats, hp, state.sigma2)[0]


# -- expansion recovery ------------------------------------------------------

def recover_original_space(u_tilde, xi_tilde_blocks, stats: EStepStats, n: int):
    """Undo both expansions. Returns ``(mu, xi_blocks, A, D)``."""
    d_mat = stats.h_sum / n
    mu, A, d_l = linalg.undo_expansion(u_tilde, d_mat)
    xi = linalg.rotate_covariances(xi_tilde_blocks, d_l, A)
    return mu, xi, A, d_mat


def converged(prev: VariationalState, curr: VariationalState, delta: float) -> bool:
    return change(prev.mu, prev.z, curr.mu, curr.z) <= delta


def change(mu_prev, z_prev, mu, z) -> float:
    return max(linalg.outer_change(mu, mu_prev), float(np.sum(np.abs(np.asarray(z) - np.asarray(z_prev)))))


# -- driver ------------------------------------------------------------------

def initial_state(X: np.ndarray, r: int, hp: Hyperparameters) -> VariationalState:
    """PCA means, all rows included, small isotropic covariances."""
    p = X.shape[1]
    sigma2 = hp.sigma2_init if hp.sigma2_init is not None else linalg.default_sigma2(X)
    mu = linalg.pca_loadings(X, r, sigma2)
    xi = np.broadcast_to(hp.xi_init * np.eye(r), (p, r, r)).copy()
    return VariationalState(mu=mu, xi=xi, u_tilde=mu.copy(), xi_tilde=xi.copy(),
                            z=np.ones(p), h=np.full(p, 500.0), sigma2=float(sigma2),
                            d_mat=np.eye(r), iteration=0)


def check_rank(X: np.ndarray, r: int):
    n, p = X.shape
    if not 1 <= r <= min(n, p):
        raise ValueError(f"rank r={r} must satisfy 1 <= r <= min(n, p) = {min(n, p)}")


def _check_finite(t: int, **arrays):
    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise FitError(f"non-finite {name} at iteration {t + 1}")


def fit_px_cavi(X, r: int, hp: Hyperparameters | None = None,
                init: VariationalState | None = None) -> FitResult:
    """Fit the jointly row-sparse variational posterior.

    ``X`` should already be centered (and scaled, if desired).
    """
    X = as_array(X)
    n, p = X.shape
    check_rank(X, r)
    hp = (hp or Hyperparameters()).resolve(p)
    state = init if init is not None else initial_state(X, r, hp)
    flags: list[str] = []
    trace: list[float] = []
    is_normal = hp.slab is Slab.NORMAL
    done = False
    t = 0
    for t in range(hp.max_iter):
        sigma2 = state.sigma2
        stats = e_step(X, state)
        if is_normal:
            u_t, xi_shared = update_rows_normal(stats, hp.lambda1)
            blocks = np.broadcast_to(xi_shared, (p, r, r))
            h = logits_normal(stats, u_t, xi_shared, hp, sigma2)
        else:
            s0 = np.clip(np.diagonal(state.xi, axis1=1, axis2=2), 1e-12, None)
            u_t, s_diag, ok = update_rows_laplace(stats, hp.lambda1, sigma2, state.mu, s0)
            if not ok:
                flags.append(f"laplace_rows_not_converged@{t + 1}")
            blocks = np.einsum("jk,kl->jkl", s_diag, np.eye(r))
            h = logits_laplace(stats, u_t, s_diag, hp, sigma2)
        h = np.clip(h, -500.0, 500.0)
        z = linalg.logistic(h)
        if hp.estimate_sigma2:
            if is_normal:
                sigma2 = update_sigma2_normal(X, z, u_t, stats, hp)
            else:
                sigma2, ok = update_sigma2_laplace(X, z, u_t, s_diag, stats, hp, sigma2)
                if not ok:
                    flags.append(f"sigma2_bracket_failed@{t + 1}")
        mu, xi, _, d_mat = recover_original_space(u_t, blocks, stats, n)
        _check_finite(t, mu=mu, z=z, sigma2=np.array(sigma2))
        new = VariationalState(mu=mu, xi=xi, u_tilde=u_t, xi_tilde=np.array(blocks), z=z, h=h,
                               sigma2=float(sigma2), d_mat=d_mat, iteration=t + 1)
        delta_t = change(state.mu, state.z, mu, z)
        trace.append(delta_t)
        state = new
        if delta_t <= hp.delta:
            done = True
            break
    support = np.flatnonzero(state.z > hp.inclusion_threshold)
    result = FitResult(
        algorithm=f"px_cavi_{hp.slab.value}", loadings=state.z[:, None] * state.mu,
        inclusion=state.z.copy(), support=support, sigma2=state.sigma2,
        iterations=t + 1, converged=done, trace=trace, flags=flags,
    )
    result.state = state
    return result
