"""Numeric checks of the nonconvex convergence rates for noisy sign-SGD and SGLD.

A run is summarised by a :class:`ConvergenceRecord` holding, for every step,
the full training gradient at the point where the step was taken.  The
``verify_*`` functions compare the repeat-averaged mean squared gradient norm
with the rate bounds and return ``(lhs, rhs, passed)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset
from .engine import TrainConfig, run_training, sample_minibatch
from .errors import PreconditionError
from .models import Model, full_loss

__all__ = [
    "OptCheckConfig",
    "ConvergenceRecord",
    "record_convergence",
    "sample_batch_deviations",
    "estimate_kappa",
    "verify_signsgd_full",
    "verify_sgld",
    "symmetric_pairs_dataset",
]

REL_TOL = 1e-12


@dataclass(frozen=True)
class OptCheckConfig:
    """Smoothness vector ``K_vec``, per-step sub-Gaussian scale ``kappa_t`` and horizon ``T``."""

    K_vec: np.ndarray
    T: int
    kappa_t: np.ndarray | float = 0.0
    c3: float = 8.0

    def __post_init__(self) -> None:
        k = np.atleast_1d(np.asarray(self.K_vec, dtype=float))
        kap = np.broadcast_to(np.asarray(self.kappa_t, dtype=float), (self.T,)).copy()
        if np.any(k < 0) or np.any(kap < 0) or self.c3 < 0:
            raise PreconditionError("K_vec, kappa_t and c3 must be nonnegative")
        object.__setattr__(self, "K_vec", k)
        object.__setattr__(self, "kappa_t", kap)

    @property
    def p(self) -> int:
        return self.K_vec.size

    @property
    def K(self) -> float:
        return float(self.K_vec.max())


@dataclass
class ConvergenceRecord:
    """Per-step full-gradient statistics of one run, taken before each update."""

    grad_sq: np.ndarray
    grad_inf: np.ndarray
    alpha: np.ndarray
    rho: np.ndarray
    loss_start: float
    loss_star: float
    loss_end: float = float("nan")
    extra: dict = field(default_factory=dict)


def record_convergence(config: TrainConfig, loss_star: float) -> ConvergenceRecord:
    """Run training and record ``||grad L_S||`` at every pre-update iterate."""
    model, data = config.model, config.dataset
    sq, inf = [], []

    def observe(info):
        g = info.grad if config.optimizer.full_batch else model.mean_grad(info.w_prev, data.X, data.y)
        sq.append(float(np.dot(g, g)))
        inf.append(float(np.max(np.abs(g))))

    traj = run_training(config, [observe])
    return ConvergenceRecord(
        grad_sq=np.array(sq),
        grad_inf=np.array(inf),
        alpha=traj.alpha,
        rho=traj.rho,
        loss_start=full_loss(model, traj.w0, data.X, data.y),
        loss_star=loss_star,
        loss_end=full_loss(model, traj.w_final, data.X, data.y),
    )


def sample_batch_deviations(model: Model, w, dataset: Dataset, b: int, count: int,
                            rng: np.random.Generator) -> np.ndarray:
    """``count`` draws of ``batch_grad - full_grad`` for batches of size ``b``."""
    full = model.mean_grad(w, dataset.X, dataset.y)
    out = np.empty((count, full.size))
    for i in range(count):
        idx = sample_minibatch(dataset.n, b, rng)
        out[i] = model.mean_grad(w, dataset.X[idx], dataset.y[idx]) - full
    return out


def estimate_kappa(deviations: np.ndarray, rng: np.random.Generator, n_dirs: int = 16,
                   lambdas: Sequence[float] = (0.5, 1.0, 2.0), include_axes: bool = False) -> float:
    """Smallest kappa with empirical ``E exp(lam <v, D>) <= exp(lam^2 kappa^2 / 2)``.

    Directions are ``n_dirs`` random unit vectors and their negatives, plus the
    signed coordinate axes when ``include_axes`` is set.
    """
    D = np.atleast_2d(np.asarray(deviations, dtype=float))
    p = D.shape[1]
    V = rng.standard_normal((n_dirs, p))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    if include_axes:
        V = np.concatenate([V, np.eye(p)])
    V = np.concatenate([V, -V])
    proj = D @ V.T
    kappa = 0.0
    for lam in lambdas:
        # log-mean-exp per direction, stabilised by the column max.
        z = lam * proj
        m = z.max(axis=0)
        log_mgf = m + np.log(np.mean(np.exp(z - m), axis=0))
        k = np.sqrt(2.0 * np.maximum(log_mgf, 0.0)) / lam
        kappa = max(kappa, float(k.max()))
    return kappa


def _check_rho(records: Sequence[ConvergenceRecord], T: int) -> None:
    target = 1.0 / math.sqrt(T)
    for r, rec in enumerate(records):
        if rec.grad_sq.size != T:
            raise PreconditionError(f"repeat {r}: recorded {rec.grad_sq.size} steps, expected T={T}")
        if np.any(np.abs(rec.rho - target) > REL_TOL * target):
            raise PreconditionError(f"repeat {r}: step size must equal 1/sqrt(T) = {target:g} at every step")


def verify_signsgd_full(config: OptCheckConfig, records: Sequence[ConvergenceRecord],
                        minibatch: bool = False) -> tuple[float, float, bool]:
    """Rate check for noisy sign-SGD.

    Full batch: ``alpha_t >= ||grad L_S(w_t)||_inf`` and constant ``5c / 3``.
    Mini-batch: ``alpha_t >= max(sqrt(2) kappa_t, 4 ||grad L_S(w_t)||_inf)`` and
    constant ``4c``.  ``c`` is the largest alpha used by any repeat.
    """
    T = config.T
    _check_rho(records, T)
    for r, rec in enumerate(records):
        floor = rec.grad_inf if not minibatch else np.maximum(math.sqrt(2.0) * config.kappa_t, 4.0 * rec.grad_inf)
        bad = rec.alpha < floor * (1.0 - REL_TOL)
        if np.any(bad):
            t = int(np.flatnonzero(bad)[0])
            raise PreconditionError(
                f"repeat {r}, step {t + 1}: alpha={rec.alpha[t]:.6g} below the required {floor[t]:.6g}"
            )
    c = max(float(rec.alpha.max()) for rec in records)
    gap = float(np.mean([rec.loss_start - rec.loss_star for rec in records]))
    coef = 4.0 if minibatch else 5.0 / 3.0
    rhs = coef * c / math.sqrt(T) * (gap + 0.5 * float(config.K_vec.sum()))
    lhs = float(np.mean([rec.grad_sq.mean() for rec in records]))
    return lhs, rhs, lhs <= rhs


def verify_sgld(config: OptCheckConfig, records: Sequence[ConvergenceRecord],
                corrected: bool = False) -> tuple[float, float, bool]:
    """Rate check for SGLD with ``eta_t = 1 / sqrt(T)``.

    ``rhs = (L(w_1) - L*) / sqrt(T) + (K / 2T) sum_t (p alpha_t^2 + c3 kappa_t^2) / sqrt(T)``.
    With ``corrected`` the right side is divided by ``1 - K eta / 2``, which
    restores the ``K eta^2 ||grad L_S||^2 / 2`` term of the one-step descent
    inequality.
    """
    T = config.T
    _check_rho(records, T)
    alpha = np.mean([rec.alpha for rec in records], axis=0)
    gap = float(np.mean([rec.loss_start - rec.loss_star for rec in records]))
    noise = config.K / (2.0 * T) * float(np.sum(config.p * alpha**2 + config.c3 * config.kappa_t**2))
    rhs = gap / math.sqrt(T) + noise / math.sqrt(T)
    if corrected:
        eta = 1.0 / math.sqrt(T)
        if config.K * eta >= 2.0:
            raise PreconditionError("corrected bound needs K * eta < 2")
        rhs /= 1.0 - config.K * eta / 2.0
    lhs = float(np.mean([rec.grad_sq.mean() for rec in records]))
    return lhs, rhs, lhs <= rhs


def symmetric_pairs_dataset(m: int, dim: int, scale: float, seed: int) -> Dataset:
    """``2m`` points ``{+u_i, -u_i}`` so every minibatch-mean law is symmetric about zero."""
    rng = np.random.default_rng(seed)
    U = scale * rng.standard_normal((m, dim))
    X = np.concatenate([U, -U])
    return Dataset(X, np.zeros(2 * m, dtype=np.int64), 2)
