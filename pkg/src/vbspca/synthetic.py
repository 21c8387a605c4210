"""Synthetic spiked-covariance datasets with a jointly row-sparse loading matrix."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .types import GroundTruth

SIMSPEC_KEYS = ("n", "p", "s_star", "r_star", "lambda_max", "lambda_min",
                "sigma2_star", "theta_norm2_override", "seed")


@dataclass(frozen=True)
class SimSpec:
    n: int = 200
    p: int = 100
    s_star: int = 20
    r_star: int = 1
    lambda_max: float = 20.0
    lambda_min: float = 10.0
    sigma2_star: float = 0.1
    theta_norm2_override: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.r_star <= self.s_star <= self.p):
            raise ValueError(
                f"need 1 <= r_star <= s_star <= p, got r_star={self.r_star}, "
                f"s_star={self.s_star}, p={self.p}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not (0 < self.lambda_min <= self.lambda_max):
            raise ValueError("need 0 < lambda_min <= lambda_max")
        if self.sigma2_star < 0:
            raise ValueError("sigma2_star must be nonnegative")
        if self.theta_norm2_override is not None and self.r_star != 1:
            raise ValueError("theta_norm2_override applies to r_star = 1 only")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> SimSpec:
        unknown = set(data) - set(SIMSPEC_KEYS)
        if unknown:
            raise ValueError(f"unknown SimSpec keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> SimSpec:
        return cls.from_dict(json.loads(text))


def random_orthonormal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed ``rows x cols`` matrix with orthonormal columns."""
    if cols > rows:
        raise ValueError(f"cannot draw {cols} orthonormal columns in dimension {rows}")
    g = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(g)
    # sign fix makes the QR map Haar (otherwise the diagonal of R is biased)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs[None, :]


def spike_eigenvalues(spec: SimSpec) -> np.ndarray:
    if spec.r_star == 1:
        value = spec.lambda_max if spec.theta_norm2_override is None else spec.theta_norm2_override
        return np.array([float(value)])
    return np.linspace(spec.lambda_max, spec.lambda_min, spec.r_star)


def make_ground_truth(spec: SimSpec) -> GroundTruth:
    rng = np.random.default_rng(spec.seed)
    support = np.sort(rng.choice(spec.p, size=spec.s_star, replace=False))
    block = random_orthonormal(spec.s_star, spec.r_star, rng)
    u_star = np.zeros((spec.p, spec.r_star))
    u_star[support] = block
    return GroundTruth(
        p=spec.p, n=spec.n, r_star=spec.r_star, s_star=spec.s_star,
        support=support, u_star=u_star, lambda_star=spike_eigenvalues(spec),
        sigma2_star=float(spec.sigma2_star), seed=spec.seed,
    )


def sample_dataset(gt: GroundTruth, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw ``n`` rows ``X_i = theta* w_i + sigma eps_i``."""
    n = gt.n if n is None else n
    w = rng.standard_normal((n, gt.r_star))
    eps = rng.standard_normal((n, gt.p))
    return w @ gt.theta_star.T + np.sqrt(gt.sigma2_star) * eps


def generate(spec: SimSpec) -> tuple[GroundTruth, np.ndarray]:
    """Ground truth and one dataset, both determined by ``spec.seed``."""
    gt = make_ground_truth(spec)
    # separate stream so the dataset does not depend on how many draws the truth used
    rng = np.random.default_rng([spec.seed, 1])
    return gt, sample_dataset(gt, rng)
