"""Spike-and-slab Bayesian sparse PCA.

Three fitters share one data model (``X_i = theta w_i + sigma eps_i`` with a
row-sparse ``theta``):

* :func:`fit_px_cavi`: mean-field variational inference with jointly
  row-sparse inclusion (normal or Laplace slab);
* :func:`fit_batch_px_cavi`: the same with entrywise inclusion;
* :func:`fit_px_em`: MAP estimation by tempered, path-followed EM.
"""

from .algorithms import ALGORITHMS, fit
from .batch import fit_batch_px_cavi
from .cavi import FitError, fit_px_cavi
from .em import fit_pca, fit_px_em
from .metrics import EvalReport, evaluate
from .synthetic import SimSpec, generate
from .types import EmNorm, FitResult, GroundTruth, Hyperparameters, Slab

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "fit", "fit_px_cavi", "fit_batch_px_cavi", "fit_px_em", "fit_pca",
    "FitError", "EvalReport", "evaluate", "SimSpec", "generate", "EmNorm", "FitResult",
    "GroundTruth", "Hyperparameters", "Slab",
]
