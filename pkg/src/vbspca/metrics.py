"""Estimation and selection quality against a known ground truth."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

EVAL_FIELDS = ("frobenius_loss", "misclassification_pct", "fdr", "fnr", "overlaps")


@dataclass
class EvalReport:
    frobenius_loss: float
    misclassification_pct: float
    fdr: float
    fnr: float
    overlaps: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> list:
        return [self.frobenius_loss, self.misclassification_pct, self.fdr, self.fnr,
                ";".join(repr(o) for o in self.overlaps)]


def orthonormal_basis(loadings: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the column span of ``loadings``.

    Thin QR keeps the column order (so column k of the basis tracks column k
    of the loadings); columns that are numerically dependent on earlier ones
    are dropped.
    """
    L = np.asarray(loadings, dtype=float)
    if L.ndim == 1:
        L = L[:, None]
    q, r = np.linalg.qr(L)
    d = np.abs(np.diag(r))
    scale = max(d.max(initial=0.0), np.linalg.norm(L, axis=0).max(initial=0.0))
    keep = d > rtol * scale if scale > 0 else np.zeros(d.shape, dtype=bool)
    q = q[:, keep] * np.sign(np.diag(r)[keep])[None, :]
    return q


def _check_orthonormal(U: np.ndarray, name: str, tol: float = 1e-6):
    gram = U.T @ U
    if U.shape[1] and np.max(np.abs(gram - np.eye(U.shape[1]))) > tol:
        raise ValueError(f"{name} does not have orthonormal columns")


def projection_frobenius(U_hat: np.ndarray, U_star: np.ndarray) -> float:
    """``||U_hat U_hat' - U* U*'||_F`` without forming ``p x p`` matrices."""
    U_hat = np.atleast_2d(np.asarray(U_hat, dtype=float).T).T
    U_star = np.atleast_2d(np.asarray(U_star, dtype=float).T).T
    _check_orthonormal(U_hat, "U_hat")
    _check_orthonormal(U_star, "U_star")
    cross = np.linalg.norm(U_hat.T @ U_star) ** 2
    val = U_hat.shape[1] + U_star.shape[1] - 2.0 * cross
    return float(np.sqrt(max(val, 0.0)))


def misclassification(z: np.ndarray, gamma_star: np.ndarray, threshold: float = 0.5) -> float:
    """Percentage of entries whose thresholded inclusion disagrees with the truth."""
    z = np.ravel(np.asarray(z, dtype=float))
    g = np.ravel(np.asarray(gamma_star)).astype(bool)
    if z.shape != g.shape:
        raise ValueError(f"length mismatch: {z.size} inclusion values vs {g.size} indicators")
    return float(100.0 * np.count_nonzero((z > threshold) != g) / z.size)


def fdr_fnr(support_hat, support_star, p: int) -> tuple[float, float]:
    s_hat = set(int(j) for j in support_hat)
    s_star = set(int(j) for j in support_star)
    for j in s_hat | s_star:
        if not 0 <= j < p:
            raise ValueError(f"index {j} outside 0..{p - 1}")
    fdr = len(s_hat - s_star) / max(len(s_hat), 1)
    fnr = len(s_star - s_hat) / max(len(s_star), 1)
    return fdr, fnr


def column_overlaps(U_hat: np.ndarray, U_star: np.ndarray) -> list[float]:
    """``|<U_hat[:, k], U*[:, k]>|`` for matched column indices."""
    U_hat = np.atleast_2d(np.asarray(U_hat, dtype=float).T).T
    U_star = np.atleast_2d(np.asarray(U_star, dtype=float).T).T
    k = min(U_hat.shape[1], U_star.shape[1])
    out = []
    for j in range(k):
        a, b = U_hat[:, j], U_star[:, j]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        out.append(0.0 if na == 0 or nb == 0 else float(min(abs(a @ b) / (na * nb), 1.0)))
    return out


def sorted_basis(loadings: np.ndarray) -> np.ndarray:
    """Unit-norm columns of ``loadings`` ordered by decreasing column norm.

    Zero columns are dropped. Used for the per-component overlap report,
    where component k of the estimate should be the k-th largest.
    """
    L = np.asarray(loadings, dtype=float)
    norms = np.linalg.norm(L, axis=0)
    order = np.argsort(-norms, kind="stable")
    order = order[norms[order] > 0]
    return L[:, order] / norms[order][None, :]


def evaluate(fit, gt, threshold: float | None = None) -> EvalReport:
    """Compare a :class:`~vbspca.types.FitResult` with a :class:`GroundTruth`."""
    threshold = 0.5 if threshold is None else threshold
    U_hat = orthonormal_basis(fit.loadings)
    loss = projection_frobenius(U_hat, gt.u_star)
    inc = np.asarray(fit.inclusion)
    if inc.ndim == 2:
        gamma = np.abs(gt.u_star) > 0
        if gamma.shape != inc.shape:
            # entrywise truth only lines up when the fitted rank equals r*
            gamma = np.repeat(gt.gamma_star[:, None], inc.shape[1], axis=1)
        misc = misclassification(inc, gamma, threshold)
    else:
        misc = misclassification(inc, gt.gamma_star, threshold)
    fdr, fnr = fdr_fnr(fit.row_support(), gt.support, gt.p)
    overlaps = column_overlaps(sorted_basis(fit.loadings), gt.u_star)
    return EvalReport(loss, misc, fdr, fnr, overlaps)
