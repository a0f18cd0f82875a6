"""Distributional loss over truncated normals on [0, +inf).

The per-sample constraint cost vector is treated as the mean of a truncated
normal with diagonal scale ``delta``; the loss is its KL divergence to a
Dirac at zero, dropping additive constants:

    sum_k  log delta_k + (mu_k / delta_k)^2 / 2 + log(1 - Phi(-mu_k / delta_k))

``delta`` is never learned by gradient; each iteration replaces it by the
minimizer of the loss upper bound, ``delta^2 = mean(mu)`` floored at 0.01.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_VARIANCE_FLOOR = 0.01

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NegativeCostError(ValueError):
    pass


class NonPositiveSigmaError(ValueError):
    pass


class EmptyBatchError(ValueError):
    pass


def std_normal_cdf(x):
    """Standard normal CDF via the complementary error function."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / _SQRT2)
    arr = np.asarray(x, dtype=float)
    return np.array([0.5 * math.erfc(-v / _SQRT2) for v in arr.reshape(-1)]).reshape(arr.shape)


def std_normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) * _INV_SQRT_2PI


@dataclass(frozen=True)
class DeltaState:
    """Per-dimension standard deviations with a variance floor."""

    delta: np.ndarray
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=float)
        object.__setattr__(self, "delta", d)
        if not np.all(np.isfinite(d)):
            raise NonPositiveSigmaError("delta must be finite")
        if np.any(d * d < self.variance_floor * (1 - 1e-12)):
            raise NonPositiveSigmaError("delta below the variance floor")

    @staticmethod
    def ones(m: int, variance_floor: float = DEFAULT_VARIANCE_FLOOR) -> "DeltaState":
        return DeltaState(np.ones(m), variance_floor)


@dataclass(frozen=True)
class LogicLossTerms:
    log_det: float
    quad: float
    tail: float

    @property
    def total(self) -> float:
        return self.log_det + self.quad + self.tail


def _check_mu(mu: np.ndarray) -> np.ndarray:
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if np.any(mu < -1e-12):
        raise NegativeCostError(f"constraint costs must be nonnegative, got {mu.min()}")
    return np.maximum(mu, 0.0)


def logic_loss(mu, d: DeltaState) -> LogicLossTerms:
    """Constant-free KL(Dirac_0 || TN(mu, diag(delta^2))) per cost dimension."""
    mu = _check_mu(mu)
    delta = d.delta
    if mu.shape != delta.shape:
        raise ValueError(f"mu shape {mu.shape} does not match delta shape {delta.shape}")
    r = mu / delta
    log_det = float(np.log(delta).sum())
    quad = float(0.5 * np.square(r).sum())
    tail = float(np.log(1.0 - std_normal_cdf(-r)).sum())
    return LogicLossTerms(log_det, quad, tail)


def logic_loss_grad(mu, d: DeltaState) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of the loss total w.r.t. mu and delta.

    d/dmu_k = mu_k/delta_k^2 + phi(r_k) / (delta_k (1 - Phi(-r_k))), which is
    strictly positive on mu_k >= 0: lowering any cost always lowers the loss.
    """
    mu = _check_mu(mu)
    delta = d.delta
    r = mu / delta
    z = 1.0 - std_normal_cdf(-r)
    hazard = std_normal_pdf(r) / z
    dmu = mu / delta**2 + hazard / delta
    ddelta = 1.0 / delta - mu**2 / delta**3 - hazard * mu / delta**2
    return dmu, ddelta


def delta_oracle(batch_mu, floor: float = DEFAULT_VARIANCE_FLOOR) -> DeltaState:
    """Min-oracle for delta: per-dimension variance = floored batch mean cost."""
    arr = np.asarray(batch_mu, dtype=float)
    if arr.size == 0:
        raise EmptyBatchError("delta_oracle needs a nonempty batch")
    if arr.ndim == 1:
        arr = arr[:, None]
    if np.any(arr < -1e-12):
        raise NegativeCostError("constraint costs must be nonnegative")
    var = np.maximum(arr.mean(axis=0), floor)
    return DeltaState(np.sqrt(var), floor)


def delta_bound(delta: np.ndarray, batch_mu: np.ndarray) -> float:
    """The upper-bound objective the oracle minimizes: sum_k log d_k + mean mu_k / (2 d_k^2)."""
    arr = np.asarray(batch_mu, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    mean = arr.mean(axis=0)
    return float(np.sum(np.log(delta) + mean / (2.0 * delta**2)))


def truncated_kl(mu1: float, sigma1: float, mu2: float, sigma2: float) -> float:
    """KL divergence between two normals truncated to [0, +inf)."""
    if sigma1 <= 0 or sigma2 <= 0:
        raise NonPositiveSigmaError("sigmas must be positive")
    r = (sigma1 / sigma2) ** 2
    z1 = 1.0 - math.erf(-mu1 / (_SQRT2 * sigma1))
    z2 = 1.0 - math.erf(-mu2 / (_SQRT2 * sigma2))
    quad = 0.5 * ((r - 1.0) - math.log(r) + (mu1 - mu2) ** 2 / sigma2**2)
    mid = ((1.0 / sigma1**2 + 1.0 / sigma2**2) * mu1 - 2.0 * mu2 / sigma2**2)
    mid *= sigma1 * _INV_SQRT_2PI / (math.exp(mu1**2 / (2.0 * sigma1**2)) * z1)
    return quad + mid + math.log(z2 / z1)


def dirac_limit_kl(mu2: float, sigma2: float) -> float:
    """sigma1 -> 0 limit of ``truncated_kl(0, sigma1, ...)`` after dropping
    the divergent target-entropy constant ``-log sigma1 - 1/2``.

    Equals the logic_loss total plus the constant log 2, so differences of
    the two agree exactly.
    """
    if sigma2 <= 0:
        raise NonPositiveSigmaError("sigma2 must be positive")
    return (math.log(sigma2) + mu2**2 / (2.0 * sigma2**2)
            + math.log(1.0 - math.erf(-mu2 / (_SQRT2 * sigma2))))


def dirac_entropy_offset(sigma1: float) -> float:
    """The sigma1-dependent constant dropped when taking the Dirac limit."""
    if sigma1 <= 0:
        raise NonPositiveSigmaError("sigma1 must be positive")
    return -math.log(sigma1) - 0.5


def total_loss(task_loss: float, logic_terms: LogicLossTerms) -> float:
    """Unweighted sum; the framework has no tunable trade-off weight."""
    if not (math.isfinite(task_loss) and math.isfinite(logic_terms.total)):
        raise ValueError("non-finite loss component")
    return task_loss + logic_terms.total
