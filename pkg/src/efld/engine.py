"""The exponential-family Langevin update loop and its special cases.

One step draws ``xi ~ p_psi(xi; grad / alpha)`` and moves ``w <- w - rho * xi``.
Gaussian noise with ``rho = eta`` and ``alpha = sigma / eta`` is SGLD; the
{-1,+1} family is noisy sign-SGD.  Plain SGD and sign-SGD are baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .divergence import max_pairwise_distance
from .errors import ConfigError, DomainError, NumericError
from .expfam import BERNOULLI_PM1, GAUSSIAN, ExpFamilySpec, ScaledParam, sample_noise
from .models import Model

__all__ = [
    "Schedule",
    "OptimizerSpec",
    "StepParams",
    "TrainState",
    "TrainConfig",
    "StepInfo",
    "Trajectory",
    "rng_streams",
    "sample_minibatch",
    "efld_step",
    "sgld_params",
    "sign_sgd_step",
    "sgd_step",
    "adaptive_alpha",
    "run_training",
]

ALPHA_MIN = 1e-8
OPTIMIZER_KINDS = ("efld", "sgld", "noisy_sign_sgd", "sign_sgd", "sgd")
ALPHA_MODES = ("schedule", "delta", "grad_inf")


@dataclass(frozen=True)
class Schedule:
    """Positive scalar schedule.

    ``constant``: ``base``.  ``step_decay``: ``base * rate ** (epoch // every)``.
    ``inverse_sqrt``: ``base / sqrt(t + 1)`` for zero-based step ``t``.
    """

    kind: str = "constant"
    base: float = 1.0
    rate: float = 1.0
    every: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "step_decay", "inverse_sqrt"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if not (math.isfinite(self.base) and self.base > 0):
            raise ConfigError(f"schedule base must be > 0, got {self.base!r}")
        if self.kind == "step_decay" and not (self.rate > 0 and self.every >= 1):
            raise ConfigError("step_decay needs rate > 0 and every >= 1")

    def value(self, t: int, epoch: int) -> float:
        if self.kind == "constant":
            return self.base
        if self.kind == "step_decay":
            return self.base * self.rate ** (epoch // self.every)
        return self.base / math.sqrt(t + 1)

    def scaled(self, factor: float) -> "Schedule":
        return replace(self, base=self.base * factor)


@dataclass(frozen=True)
class StepParams:
    eta: float
    rho: float
    alpha: float | None
    sigma: float | None


@dataclass(frozen=True)
class OptimizerSpec:
    """Optimizer description.

    ``lr`` is the step size (``eta`` for SGLD/SGD/sign-SGD, ``rho`` for EFLD and
    noisy sign-SGD).  SGLD noise comes from exactly one of ``sigma`` (a
    schedule), ``beta`` (inverse temperature, ``sigma = sqrt(2 eta / beta)``) or
    ``sigma_over_eta`` (a fixed ratio, i.e. a constant ``alpha``).

    ``alpha_mode`` selects how ``alpha`` is set for EFLD and noisy sign-SGD:
    ``schedule`` reads ``alpha``; ``delta`` uses ``alpha_safety * sqrt(8 c2) * Delta``
    over a resampled pool of ``pool_m`` points; ``grad_inf`` uses
    ``max(sqrt(2) * alpha_kappa, alpha_safety * ||grad L_S||_inf)`` from the full
    training gradient.  Every mode floors ``alpha`` at ``alpha_min``.
    """

    kind: str
    lr: Schedule
    batch_size: int = 100
    full_batch: bool = False
    family: ExpFamilySpec | None = None
    alpha: Schedule | None = None
    alpha_mode: str = "schedule"
    alpha_safety: float = 1.0
    alpha_kappa: float = 0.0
    alpha_min: float = ALPHA_MIN
    pool_m: int = 64
    sigma: Schedule | None = None
    beta: float | None = None
    sigma_over_eta: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"optimizer.kind: unknown kind {self.kind!r}; expected one of {OPTIMIZER_KINDS}")
        if self.batch_size < 1:
            raise ConfigError("optimizer.batch_size must be >= 1")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigError(f"optimizer.alpha_mode: expected one of {ALPHA_MODES}")
        if self.kind == "noisy_sign_sgd" and self.family is None:
            object.__setattr__(self, "family", BERNOULLI_PM1)
        if self.kind == "sgld":
            object.__setattr__(self, "family", GAUSSIAN)
            given = [v is not None for v in (self.sigma, self.beta, self.sigma_over_eta)]
            if sum(given) != 1:
                raise ConfigError("optimizer: SGLD needs exactly one of sigma, beta, sigma_over_eta")
            if self.beta is not None and not self.beta > 0:
                raise ConfigError("optimizer.beta must be > 0")
            if self.sigma_over_eta is not None and not self.sigma_over_eta > 0:
                raise ConfigError("optimizer.sigma_over_eta must be > 0")
        if self.kind in ("efld", "noisy_sign_sgd"):
            if self.family is None:
                raise ConfigError("optimizer.family is required for efld")
            if self.alpha_mode == "schedule" and self.alpha is None:
                raise ConfigError("optimizer.alpha schedule is required when alpha_mode = 'schedule'")
        if self.alpha_safety < 1.0 and self.alpha_mode == "delta":
            raise ConfigError("optimizer.alpha_safety must be >= 1")

    @property
    def noisy(self) -> bool:
        return self.kind in ("efld", "sgld", "noisy_sign_sgd")

    def step_params(self, t: int, epoch: int) -> StepParams:
        """Schedule values for zero-based step ``t``; adaptive alphas are filled in by the loop."""
        lr = self.lr.value(t, epoch)
        if self.kind == "sgld":
            if self.sigma is not None:
                sigma = self.sigma.value(t, epoch)
            elif self.beta is not None:
                sigma = math.sqrt(2.0 * lr / self.beta)
            else:
                sigma = self.sigma_over_eta * lr
            rho, alpha = sgld_params(lr, sigma)
            return StepParams(lr, rho, alpha, sigma)
        if self.kind in ("efld", "noisy_sign_sgd"):
            alpha = self.alpha.value(t, epoch) if self.alpha_mode == "schedule" else None
            return StepParams(lr, lr, alpha, None)
        return StepParams(lr, lr, None, None)

    def with_alpha_scale(self, k: float) -> "OptimizerSpec":
        """Same optimizer with every alpha multiplied by ``k`` (step sizes unchanged)."""
        if self.kind == "sgld":
            if self.sigma is not None:
                return replace(self, sigma=self.sigma.scaled(k))
            if self.beta is not None:
                return replace(self, beta=self.beta / (k * k))
            return replace(self, sigma_over_eta=self.sigma_over_eta * k)
        if self.alpha is not None:
            return replace(self, alpha=self.alpha.scaled(k))
        return replace(self, alpha_safety=self.alpha_safety * k, alpha_kappa=self.alpha_kappa * k)


@dataclass(frozen=True)
class TrainState:
    w: np.ndarray
    t: int
    rng: np.random.Generator
    epoch: int = 0


@dataclass
class TrainConfig:
    model: Model
    dataset: Dataset
    optimizer: OptimizerSpec
    T: int
    seed: int
    w0: np.ndarray | None = None
    record_path: bool = False


@dataclass(frozen=True)
class StepInfo:
    """Everything an observer sees after step ``t`` (one-based)."""

    t: int
    epoch: int
    w_prev: np.ndarray
    w: np.ndarray
    batch: np.ndarray | None
    grad: np.ndarray
    params: StepParams


@dataclass
class Trajectory:
    w0: np.ndarray
    w_final: np.ndarray
    T: int
    eta: np.ndarray
    rho: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray
    epoch: np.ndarray
    path: np.ndarray | None = None
    steps_per_epoch: int = 1


def rng_streams(seed: int, names: Sequence[str]) -> dict[str, np.random.Generator]:
    """Independent generators keyed by name, derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(s) for name, s in zip(names, children)}


def sample_minibatch(n: int, b: int, rng: np.random.Generator) -> np.ndarray:
    """``b`` indices drawn uniformly with replacement from ``range(n)``."""
    if n < 1 or b < 1:
        raise ConfigError(f"minibatch needs n >= 1 and b >= 1, got n={n}, b={b}")
    return rng.integers(0, n, size=b)


def _check_grad(grad: np.ndarray, t: int, w: np.ndarray) -> np.ndarray:
    g = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient", step=t, snapshot=np.array(w, copy=True))
    return g


def efld_step(state: TrainState, family: ExpFamilySpec, grad, rho: float, alpha: float) -> TrainState:
    """One update ``w - rho * xi`` with ``xi`` drawn at natural parameter ``grad / alpha``."""
    if not (rho > 0 and alpha > 0):
        raise DomainError(f"rho and alpha must be > 0, got rho={rho!r}, alpha={alpha!r}")
    g = _check_grad(grad, state.t + 1, state.w)
    xi = sample_noise(family, ScaledParam(g, alpha), state.rng).xi
    w = state.w - rho * xi
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite parameters", step=state.t + 1, snapshot=np.array(state.w, copy=True))
    return TrainState(w, state.t + 1, state.rng, state.epoch)


def sgld_params(eta: float, sigma: float) -> tuple[float, float]:
    """Map SGLD step size and noise level to ``(rho, alpha) = (eta, sigma / eta)``."""
    if not (eta > 0 and sigma > 0):
        raise ConfigError(f"SGLD needs eta > 0 and sigma > 0, got eta={eta!r}, sigma={sigma!r}")
    return eta, sigma / eta


def sign_sgd_step(state: TrainState, grad, eta: float) -> TrainState:
    """``w - eta * sign(grad)`` with sign(0) taken as +1."""
    if not eta > 0:
        raise DomainError("eta must be > 0")
    g = _check_grad(grad, state.t + 1, state.w)
    return TrainState(state.w - eta * np.where(g >= 0, 1.0, -1.0), state.t + 1, state.rng, state.epoch)


def sgd_step(state: TrainState, grad, eta: float) -> TrainState:
    g = _check_grad(grad, state.t + 1, state.w)
    w = state.w - eta * g
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite parameters", step=state.t + 1, snapshot=np.array(state.w, copy=True))
    return TrainState(w, state.t + 1, state.rng, state.epoch)


def adaptive_alpha(model: Model, w, pool_X, pool_y, c2: float, safety: float = 1.0) -> float:
    """``safety * sqrt(8 c2) * Delta`` with Delta the largest pairwise per-example gradient distance."""
    pool_X = np.asarray(pool_X, dtype=float)
    if pool_X.ndim != 2 or pool_X.shape[0] < 2:
        raise DomainError("adaptive alpha needs a pool of at least two examples")
    if safety < 1.0:
        raise DomainError("safety must be >= 1")
    G = model.grads(w, pool_X, pool_y)
    return safety * math.sqrt(8.0 * c2) * max_pairwise_distance(G)


def _augmented_pool(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    if dataset.pool_X is None or dataset.pool_size == 0:
        return dataset.X, dataset.y
    return np.concatenate([dataset.X, dataset.pool_X]), np.concatenate([dataset.y, dataset.pool_y])


Observer = Callable[[StepInfo], None]


def run_training(config: TrainConfig, observers: Sequence[Observer] = ()) -> Trajectory:
    """Run ``config.T`` steps; every observer is called after each step."""
    model, data, spec = config.model, config.dataset, config.optimizer
    if config.T < 0:
        raise ConfigError("T must be >= 0")
    streams = rng_streams(config.seed, ("init", "batch", "noise", "pool"))
    w = model.init_params(streams["init"]) if config.w0 is None else np.array(config.w0, dtype=float)
    w = model._check_w(w).copy()
    n = data.n
    b = n if spec.full_batch else spec.batch_size
    steps_per_epoch = max(1, math.ceil(n / b))
    state = TrainState(w, 0, streams["noise"], 0)
    aug = _augmented_pool(data) if spec.alpha_mode == "delta" and spec.kind in ("efld", "noisy_sign_sgd") else None
    T = config.T
    rec = {k: np.full(T, np.nan) for k in ("eta", "rho", "alpha", "sigma")}
    epochs = np.zeros(T, dtype=np.int64)
    path = None
    if config.record_path:
        path = np.empty((T + 1, w.size))
        path[0] = w
    w0 = w.copy()
    for i in range(T):
        epoch = i // steps_per_epoch
        if spec.full_batch:
            batch = None
            grad = model.mean_grad(state.w, data.X, data.y)
        else:
            batch = sample_minibatch(n, b, streams["batch"])
            grad = model.mean_grad(state.w, data.X[batch], data.y[batch])
        grad = _check_grad(grad, i + 1, state.w)
        p = spec.step_params(i, epoch)
        w_prev = state.w
        if spec.kind in ("efld", "noisy_sign_sgd"):
            alpha = p.alpha
            if spec.alpha_mode == "delta":
                pick = streams["pool"].choice(aug[0].shape[0], size=min(spec.pool_m, aug[0].shape[0]), replace=False)
                alpha = adaptive_alpha(model, w_prev, aug[0][pick], aug[1][pick], spec.family.c2, spec.alpha_safety)
            elif spec.alpha_mode == "grad_inf":
                full = grad if spec.full_batch else model.mean_grad(w_prev, data.X, data.y)
                alpha = max(math.sqrt(2.0) * spec.alpha_kappa, spec.alpha_safety * float(np.max(np.abs(full))))
            alpha = max(alpha, spec.alpha_min)
            p = StepParams(p.eta, p.rho, alpha, None)
            state = efld_step(state, spec.family, grad, p.rho, alpha)
        elif spec.kind == "sgld":
            state = efld_step(state, GAUSSIAN, grad, p.rho, p.alpha)
        elif spec.kind == "sign_sgd":
            state = sign_sgd_step(state, grad, p.eta)
        else:
            state = sgd_step(state, grad, p.eta)
        state = TrainState(state.w, state.t, state.rng, epoch)
        rec["eta"][i], rec["rho"][i] = p.eta, p.rho
        rec["alpha"][i] = np.nan if p.alpha is None else p.alpha
        rec["sigma"][i] = np.nan if p.sigma is None else p.sigma
        epochs[i] = epoch
        if path is not None:
            path[i + 1] = state.w
        if observers:
            info = StepInfo(i + 1, epoch, w_prev, state.w, batch, grad, p)
            for obs in observers:
                obs(info)
    return Trajectory(w0, state.w.copy(), T, rec["eta"], rec["rho"], rec["alpha"], rec["sigma"], epochs, path,
                      steps_per_epoch)
