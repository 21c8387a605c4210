"""Name-based dispatch over the fitters, shared by the CLI and the benchmark."""

from __future__ import annotations

from .batch import fit_batch_px_cavi
from .cavi import fit_px_cavi
from .em import fit_pca, fit_px_em
from .types import EmNorm, FitResult, Hyperparameters, Slab

ALGORITHMS = ("px_cavi_normal", "px_cavi_laplace", "batch_px_cavi", "px_em_l1", "px_em_l2", "pca")


def configure(name: str, hp: Hyperparameters | None = None) -> Hyperparameters:
    """Hyperparameters with the slab or norm implied by the algorithm name."""
    if name not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {name!r}; choose from {', '.join(ALGORITHMS)}")
    hp = hp or Hyperparameters()
    if name == "px_cavi_laplace":
        return hp.with_overrides(slab=Slab.LAPLACE)
    if name in ("px_cavi_normal", "batch_px_cavi"):
        return hp.with_overrides(slab=Slab.NORMAL)
    if name == "px_em_l1":
        return hp.with_overrides(em_norm=EmNorm.L1)
    if name == "px_em_l2":
        return hp.with_overrides(em_norm=EmNorm.L2)
    return hp


def fit(name: str, X, r: int, hp: Hyperparameters | None = None) -> FitResult:
    hp = configure(name, hp)
    if name.startswith("px_cavi"):
        return fit_px_cavi(X, r, hp)
    if name == "batch_px_cavi":
        return fit_batch_px_cavi(X, r, hp)
    if name.startswith("px_em"):
        return fit_px_em(X, r, hp)
    return fit_pca(X, r, hp)
