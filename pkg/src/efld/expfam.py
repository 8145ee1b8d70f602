"""Component-wise independent exponential families in scaled natural-parameter form.

Three families are supported, each acting independently on every coordinate:

* ``GAUSSIAN``: log-partition ``theta**2 / 2``, support the real line.
* ``BERNOULLI_PM1``: support ``{-1, +1}``, log-partition ``log(e^-theta + e^theta)``.
* ``BERNOULLI_01``: support ``{0, 1}``, log-partition ``log(1 + e^theta)``.

A draw is parameterised by a :class:`ScaledParam` holding the unscaled natural
parameter ``theta`` together with the scaling ``alpha``; the natural parameter
seen by the density is ``theta / alpha``.

The Gaussian family is kept in "location" form: ``sample_noise`` returns
``N(theta, alpha**2)`` draws so that multiplying by a step size ``eta`` with
``alpha = sigma / eta`` yields the usual Langevin increment
``eta * grad + N(0, sigma**2)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = [
    "Kind",
    "Support",
    "ExpFamilySpec",
    "ScaledParam",
    "NoiseDraw",
    "GAUSSIAN",
    "BERNOULLI_PM1",
    "BERNOULLI_01",
    "family_by_name",
    "log_partition",
    "mean_param",
    "log_partition_hess",
    "sample_noise",
    "log_density",
    "bregman_div",
    "PROB_FLOOR",
    "PROB_CEIL",
]

# Clamp range for saturated logistic probabilities.
PROB_FLOOR = 1e-300
PROB_CEIL = 1.0 - 1e-16


class Kind(enum.Enum):
    GAUSSIAN = "gaussian"
    BERNOULLI_PM1 = "bernoulli_pm1"
    BERNOULLI_01 = "bernoulli_01"


class Support(enum.Enum):
    REAL_LINE = "real-line"
    PLUS_MINUS_ONE = "{-1,+1}"
    ZERO_ONE = "{0,1}"


@dataclass(frozen=True)
class ExpFamilySpec:
    """An exponential family with its support and smoothness constant ``c2 = sup psi''``."""

    kind: Kind
    support: Support
    c2: float

    @property
    def name(self) -> str:
        return self.kind.value


GAUSSIAN = ExpFamilySpec(Kind.GAUSSIAN, Support.REAL_LINE, 1.0)
BERNOULLI_PM1 = ExpFamilySpec(Kind.BERNOULLI_PM1, Support.PLUS_MINUS_ONE, 1.0)
BERNOULLI_01 = ExpFamilySpec(Kind.BERNOULLI_01, Support.ZERO_ONE, 0.25)

_BY_NAME = {f.name: f for f in (GAUSSIAN, BERNOULLI_PM1, BERNOULLI_01)}


def family_by_name(name: str) -> ExpFamilySpec:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise DomainError(f"unknown family {name!r}; expected one of {sorted(_BY_NAME)}") from None


@dataclass(frozen=True)
class ScaledParam:
    """Natural parameter ``theta`` with scaling ``alpha > 0``; the scaled value is ``theta / alpha``."""

    theta: np.ndarray
    alpha: float

    def __post_init__(self) -> None:
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "theta", theta)
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise DomainError(f"alpha must be finite and > 0, got {self.alpha!r}")
        if not np.all(np.isfinite(theta)):
            raise DomainError("theta contains non-finite entries")

    @property
    def scaled(self) -> np.ndarray:
        return self.theta / self.alpha


@dataclass(frozen=True)
class NoiseDraw:
    xi: np.ndarray


def _as_finite(theta) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(theta, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise DomainError("non-finite natural parameter")
    return arr


def _log_partition_terms(spec: ExpFamilySpec, th: np.ndarray) -> np.ndarray:
    if spec.kind is Kind.GAUSSIAN:
        return 0.5 * th * th
    if spec.kind is Kind.BERNOULLI_PM1:
        # log(e^-t + e^t) = |t| + log1p(e^{-2|t|})
        a = np.abs(th)
        return a + np.log1p(np.exp(-2.0 * a))
    # log(1 + e^t) = max(t, 0) + log1p(e^{-|t|})
    return np.maximum(th, 0.0) + np.log1p(np.exp(-np.abs(th)))


def log_partition(spec: ExpFamilySpec, theta_alpha) -> float:
    """Sum over coordinates of the scalar log-partition function."""
    th = _as_finite(theta_alpha)
    return float(np.sum(_log_partition_terms(spec, th)))


def _logistic(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mean_param(spec: ExpFamilySpec, theta_alpha) -> np.ndarray:
    """Gradient of the log-partition, i.e. the expectation parameter."""
    th = _as_finite(theta_alpha)
    if spec.kind is Kind.GAUSSIAN:
        return th.copy()
    if spec.kind is Kind.BERNOULLI_PM1:
        return np.tanh(th)
    return _logistic(th)


def log_partition_hess(spec: ExpFamilySpec, theta_alpha) -> np.ndarray:
    """Diagonal of the Hessian of the log-partition (per-coordinate variance)."""
    th = _as_finite(theta_alpha)
    if spec.kind is Kind.GAUSSIAN:
        return np.ones_like(th)
    if spec.kind is Kind.BERNOULLI_PM1:
        return 1.0 - np.tanh(th) ** 2
    p = _logistic(th)
    return p * (1.0 - p)


def _prob_one(spec: ExpFamilySpec, th: np.ndarray) -> np.ndarray:
    """Probability of the upper support point (+1 or 1), clamped away from 0 and 1."""
    if spec.kind is Kind.BERNOULLI_PM1:
        p = _logistic(2.0 * th)
    else:
        p = _logistic(th)
    return np.clip(p, PROB_FLOOR, PROB_CEIL)


def sample_noise(spec: ExpFamilySpec, param: ScaledParam, rng: np.random.Generator) -> NoiseDraw:
    """Draw every coordinate independently from the family at ``param``."""
    if spec.kind is Kind.GAUSSIAN:
        z = rng.standard_normal(param.theta.shape)
        return NoiseDraw(param.theta + param.alpha * z)
    p = _prob_one(spec, param.scaled)
    u = rng.random(p.shape)
    hit = u < p
    if spec.kind is Kind.BERNOULLI_PM1:
        return NoiseDraw(np.where(hit, 1.0, -1.0))
    return NoiseDraw(hit.astype(float))


def _check_support(spec: ExpFamilySpec, xi: np.ndarray) -> None:
    if spec.kind is Kind.GAUSSIAN:
        if not np.all(np.isfinite(xi)):
            raise DomainError("Gaussian draw must be finite")
        return
    allowed = (-1.0, 1.0) if spec.kind is Kind.BERNOULLI_PM1 else (0.0, 1.0)
    if not np.all(np.isin(xi, allowed)):
        raise DomainError(f"draw outside support {spec.support.value}")


def log_density(spec: ExpFamilySpec, xi, param: ScaledParam) -> float:
    """Log density (or mass) of ``xi`` under the family at ``param``.

    Discrete families use the counting base measure.  The Gaussian family has
    sufficient statistic ``xi / alpha`` and base measure ``N(0, alpha**2)``,
    which makes the density that of ``N(theta, alpha**2)``.
    """
    x = np.atleast_1d(np.asarray(xi.xi if isinstance(xi, NoiseDraw) else xi, dtype=float))
    if x.shape != param.theta.shape:
        raise DomainError(f"draw shape {x.shape} does not match parameter shape {param.theta.shape}")
    _check_support(spec, x)
    th = param.scaled
    if spec.kind is Kind.GAUSSIAN:
        a = param.alpha
        stat = x / a
        base = -0.5 * np.sum(stat * stat) - x.size * 0.5 * math.log(2.0 * math.pi * a * a)
        return float(np.dot(stat, th) - log_partition(spec, th) + base)
    return float(np.dot(x, th) - log_partition(spec, th))


def bregman_div(spec: ExpFamilySpec, theta1, theta2) -> float:
    """Bregman divergence of the log-partition between two natural parameters."""
    t1 = _as_finite(theta1)
    t2 = _as_finite(theta2)
    if t1.shape != t2.shape:
        raise DomainError("theta1 and theta2 must have the same shape")
    if spec.kind is Kind.GAUSSIAN:
        d = t1 - t2
        return float(0.5 * np.dot(d, d))
    val = (
        np.sum(_log_partition_terms(spec, t1))
        - np.sum(_log_partition_terms(spec, t2))
        - np.dot(mean_param(spec, t2), t1 - t2)
    )
    # Cancellation can leave a tiny negative residue.
    return float(max(val, 0.0))
