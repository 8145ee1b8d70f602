"""Online accumulation of the gradient-discrepancy generalization bound.

Each recorded step estimates, by Monte Carlo over ``m`` pairs ``(z, z')`` with
``z`` from the training set and ``z'`` from the held-out pool:

* ``mean_disc``: ``E ||grad l(w, z) - grad l(w, z')||^2``
* ``mean_grad_sq``: ``E ||grad l(w, z)||^2``

and adds ``weight * mean_disc / alpha_t^2`` to the discrepancy radicand and
``weight * eta_t^2 * mean_grad_sq / sigma_t^2`` to the gradient-norm radicand.
The bounds are ``(c / n) * sqrt(radicand)`` with ``c = c0 * sqrt(5 * c2)``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import Dataset
from .divergence import alpha_floor, max_pairwise_distance
from .engine import StepInfo, StepParams
from .errors import ConfigError, FormatError, UnsupportedError
from .models import Model, test_error

__all__ = [
    "CSV_COLUMNS",
    "BoundConfig",
    "BoundRow",
    "BoundLedger",
    "grad_discrepancy",
    "record_step",
    "our_bound",
    "li_bound",
    "bound_series",
    "surrogate_incoherence",
    "delta_and_floor",
    "replay_ledger",
    "BoundMeter",
    "write_ledger_csv",
    "read_ledger_csv",
    "format_value",
]

CSV_COLUMNS = (
    "t", "epoch", "eta", "sigma", "alpha", "mean_disc", "mean_grad_sq", "incoh_surrogate",
    "delta_hat", "alpha_floor", "our_bound", "li_bound", "train_err", "test_err",
)


@dataclass(frozen=True)
class BoundConfig:
    """Bound constants and Monte Carlo settings.

    ``c_li`` defaults to the same ``c0 * sqrt(5 * c2)`` as the discrepancy
    bound so the two curves differ only through their radicands.
    """

    n: int
    c0: float = 8.0
    c2: float = 1.0
    pairs_per_step: int = 20
    eval_every: int = 1
    batch_size: int | None = None
    c_li: float | None = None
    delta_pool_m: int = 64

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError("bound.n must be >= 1")
        if self.pairs_per_step < 1:
            raise ConfigError("bound.pairs_per_step must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("bound.eval_every must be >= 1")
        if self.c0 <= 0 or self.c2 < 0:
            raise ConfigError("bound.c0 must be > 0 and c2 >= 0")
        if self.batch_size is not None and self.n < 2 * self.batch_size:
            warnings.warn(f"n={self.n} is below twice the batch size {self.batch_size}; the bound assumes b <= n/2",
                          stacklevel=2)

    @property
    def c(self) -> float:
        return self.c0 * math.sqrt(5.0 * self.c2)

    @property
    def li_constant(self) -> float:
        return self.c if self.c_li is None else self.c_li


@dataclass(frozen=True)
class BoundRow:
    t: int
    epoch: int
    eta: float
    sigma: float
    alpha: float
    inv_alpha_sq: float
    weight: int
    mean_disc: float
    mean_grad_sq: float
    incoh_surrogate: float
    delta_hat: float
    alpha_floor: float
    ours_cum: float
    li_cum: float
    train_err: float = float("nan")
    test_err: float = float("nan")


@dataclass
class BoundLedger:
    rows: list[BoundRow] = field(default_factory=list)
    ours_radicand: float = 0.0
    li_radicand: float = 0.0
    li_supported: bool = True

    def __len__(self) -> int:
        return len(self.rows)


def grad_discrepancy(model: Model, w, z, zprime) -> float:
    """Squared distance between the gradients at two examples."""
    x1, y1 = z
    x2, y2 = zprime
    X = np.stack([np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)])
    y = np.array([y1, y2]) if y1 is not None else None
    G = model.grads(w, X, y)
    d = G[0] - G[1]
    return float(np.dot(d, d))


def surrogate_incoherence(model: Model, w, batch, dataset: Dataset) -> float:
    """``||grad over the batch - grad over the full training set||^2`` (a labelled stand-in)."""
    idx = np.asarray(batch)
    d = model.mean_grad(w, dataset.X[idx], dataset.y[idx]) - model.mean_grad(w, dataset.X, dataset.y)
    return float(np.dot(d, d))


def delta_and_floor(model: Model, w, pool_X, pool_y, c2: float) -> tuple[float, float]:
    """Largest pairwise gradient distance over the pool and the matching alpha floor."""
    G = model.grads(w, np.asarray(pool_X, dtype=float), pool_y)
    delta = max_pairwise_distance(G)
    return delta, alpha_floor(delta, c2)


def _inv_alpha_sq(params: StepParams) -> tuple[float, float, float]:
    """``(sigma, alpha, 1/alpha^2)``; SGLD uses ``(eta/sigma)^2`` so both radicands share it exactly."""
    if params.sigma is not None:
        inv = (params.eta / params.sigma) ** 2
        return params.sigma, params.alpha, inv
    if params.alpha is not None:
        return float("nan"), params.alpha, 1.0 / params.alpha**2
    return float("nan"), float("nan"), float("inf")


def record_step(ledger: BoundLedger, t: int, model: Model, w, dataset: Dataset, params: StepParams,
                config: BoundConfig, rng: np.random.Generator, *, epoch: int = 0, weight: int | None = None,
                batch=None, track_delta: bool = True, errors: tuple[float, float] | None = None) -> BoundLedger:
    """Estimate the step statistics at ``w`` and append one row; returns the same ledger.

    ``weight`` is the number of steps the row stands for (defaults to
    ``config.eval_every``).  When ``batch`` is given the incoherence surrogate
    is computed too.
    """
    if dataset.pool_size == 0:
        raise ConfigError("bound meter needs a nonempty held-out pool")
    k = config.eval_every if weight is None else int(weight)
    m = config.pairs_per_step
    i = rng.integers(0, dataset.n, size=m)
    j = rng.integers(0, dataset.pool_size, size=m)
    G = model.grads(w, dataset.X[i], dataset.y[i])
    Gp = model.grads(w, dataset.pool_X[j], dataset.pool_y[j])
    mean_disc = float(np.mean(np.sum((G - Gp) ** 2, axis=1)))
    mean_grad_sq = float(np.mean(np.sum(G * G, axis=1)))
    incoh = surrogate_incoherence(model, w, batch, dataset) if batch is not None else float("nan")
    if track_delta:
        X_aug = np.concatenate([dataset.X, dataset.pool_X])
        y_aug = np.concatenate([dataset.y, dataset.pool_y])
        pick = rng.choice(X_aug.shape[0], size=min(config.delta_pool_m, X_aug.shape[0]), replace=False)
        delta, floor = delta_and_floor(model, w, X_aug[pick], y_aug[pick], config.c2)
    else:
        delta = floor = float("nan")
    sigma, alpha, inv = _inv_alpha_sq(params)
    if mean_disc > 0:
        ledger.ours_radicand += k * mean_disc * inv
    if params.sigma is not None:
        ledger.li_radicand += k * inv * mean_grad_sq
    else:
        ledger.li_supported = False
    train_err, test_err = errors if errors is not None else (float("nan"), float("nan"))
    ledger.rows.append(BoundRow(
        t=t, epoch=epoch, eta=params.eta, sigma=sigma, alpha=alpha, inv_alpha_sq=inv, weight=k,
        mean_disc=mean_disc, mean_grad_sq=mean_grad_sq, incoh_surrogate=incoh, delta_hat=delta,
        alpha_floor=floor, ours_cum=ledger.ours_radicand,
        li_cum=ledger.li_radicand if ledger.li_supported else float("nan"),
        train_err=train_err, test_err=test_err,
    ))
    return ledger


def our_bound(ledger: BoundLedger, config: BoundConfig) -> float:
    """``(c0 sqrt(5 c2) / n) * sqrt(discrepancy radicand)``."""
    return config.c / config.n * math.sqrt(ledger.ours_radicand)


def li_bound(ledger: BoundLedger, config: BoundConfig) -> float:
    """``(c_li / n) * sqrt(sum eta^2 * mean_grad_sq / sigma^2)``; SGLD runs only."""
    if not ledger.li_supported:
        raise UnsupportedError("the gradient-norm bound needs an SGLD run (sigma defined at every step)")
    return config.li_constant / config.n * math.sqrt(ledger.li_radicand)


def bound_series(ledger: BoundLedger, config: BoundConfig) -> tuple[np.ndarray, np.ndarray]:
    """Running values of both bounds at every row."""
    ours = np.array([r.ours_cum for r in ledger.rows], dtype=float)
    li = np.array([r.li_cum for r in ledger.rows], dtype=float)
    return config.c / config.n * np.sqrt(ours), config.li_constant / config.n * np.sqrt(li)


def replay_ledger(ledger: BoundLedger, alpha_scale: float = 1.0) -> BoundLedger:
    """Rebuild the running radicands with every alpha multiplied by ``alpha_scale``.

    Step sizes are held fixed, so for SGLD rows sigma scales with alpha.
    """
    if not alpha_scale > 0:
        raise ConfigError("alpha_scale must be > 0")
    out = BoundLedger(li_supported=ledger.li_supported)
    s2 = alpha_scale * alpha_scale
    for r in ledger.rows:
        inv = r.inv_alpha_sq / s2
        if r.mean_disc > 0:
            out.ours_radicand += r.weight * r.mean_disc * inv
        if ledger.li_supported:
            out.li_radicand += r.weight * inv * r.mean_grad_sq
        out.rows.append(replace(
            r, sigma=r.sigma * alpha_scale, alpha=r.alpha * alpha_scale, inv_alpha_sq=inv,
            ours_cum=out.ours_radicand, li_cum=out.li_radicand if ledger.li_supported else float("nan"),
        ))
    return out


class BoundMeter:
    """Training observer that records a ledger row every ``eval_every`` steps.

    A row is recorded at steps ``1, 1 + k, 1 + 2k, ...`` using the pre-update
    iterate and stands for ``min(k, T - t + 1)`` steps.  Train and test errors
    are evaluated at the post-update iterate of the same step.
    """

    def __init__(self, model: Model, train: Dataset, config: BoundConfig, rng: np.random.Generator, T: int,
                 test: Dataset | None = None, track_delta: bool = True, track_incoherence: bool = True,
                 track_errors: bool = True):
        self.model, self.train, self.test = model, train, test
        self.config, self.rng, self.T = config, rng, T
        self.track_delta = track_delta
        self.track_incoherence = track_incoherence
        self.track_errors = track_errors and model.is_classifier
        self.ledger = BoundLedger()

    def __call__(self, info: StepInfo) -> None:
        k = self.config.eval_every
        if (info.t - 1) % k:
            return
        errs = None
        if self.track_errors:
            tr = test_error(self.model, info.w, self.train.X, self.train.y)
            te = test_error(self.model, info.w, self.test.X, self.test.y) if self.test is not None else float("nan")
            errs = (tr, te)
        batch = info.batch if self.track_incoherence else None
        record_step(self.ledger, info.t, self.model, info.w_prev, self.train, info.params, self.config, self.rng,
                    epoch=info.epoch, weight=min(k, self.T - info.t + 1), batch=batch,
                    track_delta=self.track_delta, errors=errs)


def format_value(v) -> str:
    """CSV cell: integers as is, floats by ``repr`` (round-trip exact), strings unchanged."""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def ledger_table(ledger: BoundLedger, config: BoundConfig) -> list[tuple]:
    ours, li = bound_series(ledger, config)
    return [
        (r.t, r.epoch, r.eta, r.sigma, r.alpha, r.mean_disc, r.mean_grad_sq, r.incoh_surrogate, r.delta_hat,
         r.alpha_floor, o, l, r.train_err, r.test_err)
        for r, o, l in zip(ledger.rows, ours, li)
    ]


def write_ledger_csv(path, ledger: BoundLedger, config: BoundConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in ledger_table(ledger, config):
            w.writerow([format_value(v) for v in row])
    return path


def read_ledger_csv(path, required: Iterable[str] = CSV_COLUMNS) -> dict[str, np.ndarray]:
    """Read a ledger-schema CSV into float columns, checking required headers."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise FormatError(f"{path}: empty CSV", offset=0)
    header = rows[0]
    for col in required:
        if col not in header:
            raise FormatError(f"{path}: missing column {col!r}")
    if len(rows) < 2:
        raise FormatError(f"{path}: no data rows")
    cols: dict[str, list[float]] = {h: [] for h in header}
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}: line {line_no} has {len(row)} fields, header has {len(header)}")
        for h, v in zip(header, row):
            try:
                cols[h].append(float(v))
            except ValueError:
                raise FormatError(f"{path}: column {h!r} line {line_no}: not a number: {v!r}") from None
    return {h: np.array(v) for h, v in cols.items()}
