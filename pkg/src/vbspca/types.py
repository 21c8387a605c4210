"""Shared value types.

Symbol map (row vectors throughout, ``p`` variables, ``n`` observations,
``r`` components):

==================  =====================================================
field               meaning
==================  =====================================================
``mu``              original-space variational means, one row per variable
``xi``              original-space row covariances (scaled by sigma2)
``u_tilde``         expanded-space means (after both expansions)
``xi_tilde``        expanded-space row covariances
``z`` / ``h``       inclusion probabilities and their logits
``omega_tilde``     E-step posterior means of the latent scores
``v_w``             E-step posterior covariance of the latent scores
``h_sum``           sum_i omega_i omega_i' + n V_w
``xw``              row j is sum_i X_ij omega_i
``theta``           MAP loadings (EM)
``gamma_tilde``     EM responsibilities of the slab component
==================  =====================================================

Indices are 0-based internally; anything written for humans (CLI output)
is converted to 1-based at the boundary.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class Slab(str, enum.Enum):
    """Slab density of the CAVI prior."""

    NORMAL = "normal"  # q = 2, m = 2
    LAPLACE = "laplace"  # q = 1, m = 1


class EmNorm(str, enum.Enum):
    """Row norm used by the EM penalty (always with m = 1)."""

    L1 = "l1"
    L2 = "l2"


@dataclass(frozen=True)
class DataMatrix:
    """An ``n x p`` data matrix with validated shape and finite entries."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"data must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 2 or arr.shape[1] < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise ValueError(f"non-finite entry at row {bad[0] + 1}, column {bad[1] + 1}")
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


def as_array(X) -> np.ndarray:
    """Return the validated float array behind ``X`` (array or DataMatrix)."""
    if isinstance(X, DataMatrix):
        return X.values
    return DataMatrix(X).values


@dataclass(frozen=True)
class GroundTruth:
    p: int
    n: int
    r_star: int
    s_star: int
    support: np.ndarray
    u_star: np.ndarray
    lambda_star: np.ndarray
    sigma2_star: float
    seed: int

    @property
    def theta_star(self) -> np.ndarray:
        return self.u_star * np.sqrt(self.lambda_star)[None, :]

    @property
    def gamma_star(self) -> np.ndarray:
        g = np.zeros(self.p, dtype=bool)
        g[self.support] = True
        return g

    def covariance(self) -> np.ndarray:
        th = self.theta_star
        return th @ th.T + self.sigma2_star * np.eye(self.p)


@dataclass(frozen=True)
class Hyperparameters:
    """Prior and algorithm constants.

    ``alpha2=None`` resolves to ``p + 1`` and ``lambda0=None`` to
    ``p**2 * log(p)`` once the dimension is known (see :meth:`resolve`).
    ``sigma2_init=None`` uses the smallest eigenvalue of the sample
    covariance.
    """

    lambda1: float = 1.0
    lambda0: float | None = None
    alpha1: float = 1.0
    alpha2: float | None = None
    sigma_a: float = 1.0
    sigma_b: float = 2.0
    slab: Slab = Slab.NORMAL
    em_norm: EmNorm = EmNorm.L1
    max_iter: int = 100
    delta: float = 1e-4
    iota: float = 0.1
    inclusion_threshold: float = 0.5
    estimate_sigma2: bool = True
    sigma2_init: float | None = None
    xi_init: float = 1e-3
    path_stages: int = 10

    def __post_init__(self):
        object.__setattr__(self, "slab", Slab(self.slab))
        object.__setattr__(self, "em_norm", EmNorm(self.em_norm))
        for name in ("lambda1", "alpha1", "sigma_a", "sigma_b", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.alpha2 is not None and not self.alpha2 > 0:
            raise ValueError("alpha2 must be positive")
        if self.lambda0 is not None and not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not 0 < self.iota <= 1:
            raise ValueError("iota must lie in (0, 1]")
        if not 0 < self.inclusion_threshold < 1:
            raise ValueError("inclusion_threshold must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.sigma2_init is not None and not self.sigma2_init > 0:
            raise ValueError("sigma2_init must be positive")

    def resolve(self, p: int) -> Hyperparameters:
        alpha2 = self.alpha2 if self.alpha2 is not None else p + 1.0
        lambda0 = self.lambda0
        if lambda0 is None:
            lambda0 = max(p * p * math.log(p), 2.0 * self.lambda1) if p > 1 else 2.0 * self.lambda1
        return dataclasses.replace(self, alpha2=float(alpha2), lambda0=float(lambda0))

    def with_overrides(self, **kw) -> Hyperparameters:
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_dict(cls, data: dict, base: Hyperparameters | None = None) -> Hyperparameters:
        """Build from a plain mapping (e.g. a JSON config); unknown keys are rejected."""
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown hyperparameter(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(base or cls(), **data)


@dataclass
class EStepStats:
    omega_tilde: np.ndarray
    v_w: np.ndarray
    h_sum: np.ndarray
    xw: np.ndarray


@dataclass
class VariationalState:
    mu: np.ndarray
    xi: np.ndarray
    u_tilde: np.ndarray
    xi_tilde: np.ndarray
    z: np.ndarray
    h: np.ndarray
    sigma2: float
    d_mat: np.ndarray
    iteration: int = 0


@dataclass
class BatchVariationalState:
    mu: np.ndarray
    psi: np.ndarray
    u_tilde: np.ndarray
    psi_tilde: np.ndarray
    z: np.ndarray
    z_theta: np.ndarray
    h: np.ndarray
    sigma2: float
    d_mat: np.ndarray
    iteration: int = 0


@dataclass
class EmState:
    theta: np.ndarray
    gamma_tilde: np.ndarray
    kappa: float
    sigma2: float
    m_mat: np.ndarray
    m_l: np.ndarray
    d_vecs: np.ndarray
    objective: float = -math.inf
    beta_tilde: np.ndarray | None = None


@dataclass
class FitResult:
    """Outcome of a fit.

    ``loadings`` is the posterior mean of the loadings (``z * mu`` for the
    variational fits, ``theta`` for EM); ``support`` holds 0-based indices
    of rows (or flattened entries, for the batch fit) whose inclusion
    exceeds the threshold.
    """

    algorithm: str
    loadings: np.ndarray
    inclusion: np.ndarray
    support: np.ndarray
    sigma2: float
    iterations: int
    converged: bool
    trace: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def row_support(self) -> np.ndarray:
        """Rows with at least one selected entry."""
        support = np.asarray(self.support, dtype=int)
        inc = np.asarray(self.inclusion)
        if inc.ndim == 1:
            return support
        return np.unique(support // inc.shape[1])


# -- serialization ---------------------------------------------------------

_TYPES = {
    cls.__name__: cls
    for cls in (DataMatrix, GroundTruth, Hyperparameters, EStepStats, VariationalState,
                BatchVariationalState, EmState, FitResult)
}


def _encode(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return {"__ndarray__": value.tolist(), "dtype": value.dtype.str, "shape": list(value.shape)}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return {"__float__": repr(value)}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    return value


def _decode(value: Any) -> Any:
    if isinstance(value, dict) and "__ndarray__" in value:
        arr = np.array(value["__ndarray__"], dtype=np.dtype(value["dtype"]))
        return arr.reshape(value["shape"])
    if isinstance(value, dict) and "__float__" in value:
        return float(value["__float__"])
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


def to_dict(obj) -> dict:
    """Encode one of the value types as JSON-compatible data."""
    out = {"__type__": type(obj).__name__}
    for f in dataclasses.fields(obj):
        out[f.name] = _encode(getattr(obj, f.name))
    return out


def from_dict(data: dict):
    """Inverse of :func:`to_dict`; finite floats round-trip bit-exactly."""
    cls = _TYPES[data["__type__"]]
    kw = {k: _decode(v) for k, v in data.items() if k != "__type__"}
    return cls(**kw)
