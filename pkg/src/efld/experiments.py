"""Run configured experiments: build data and model, train every seed, aggregate."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundConfig, BoundLedger, BoundMeter, bound_series
from .config import RunConfig
from .data import Dataset, SynthSpec, corrupt_labels, mnist_available, mnist_splits, synth_splits
from .engine import TrainConfig, rng_streams, run_training
from .errors import ConfigError
from .models import LossCaps, Model, model_from_config, test_error

__all__ = ["SeedResult", "build_data", "build_model", "run_seed", "run_seeds", "aggregate", "AGG_METRICS"]

AGG_METRICS = ("our_bound", "li_bound", "train_err", "test_err", "bound_plus_train", "mean_disc", "mean_grad_sq",
               "incoh_surrogate")


@dataclass
class SeedResult:
    seed: int
    ledger: BoundLedger
    bound_config: BoundConfig
    final_train_err: float
    final_test_err: float
    source: str
    meta: dict = field(default_factory=dict)


def build_data(cfg: RunConfig, seed: int, data_dir=None) -> tuple[Dataset, Dataset, str]:
    """Training set (with held-out pool) and test set; MNIST when available, else blobs."""
    d = cfg.data
    source = d.get("source", "auto")
    n = int(d.get("n", 1000))
    n_test = d.get("n_test")
    data_seed = int(d.get("seed", seed))
    if source == "mnist" or (source == "auto" and mnist_available(data_dir)):
        if not mnist_available(data_dir):
            raise ConfigError("data.source: 'mnist' requested but no IDX files were found in the data directory")
        train, test = mnist_splits(data_dir, n, data_seed, n_test)
        used = "mnist"
    else:
        spec = SynthSpec(int(d.get("dim", 20)), n, int(d.get("classes", 10)), float(d.get("separation", 3.0)),
                         None if n_test is None else int(n_test))
        train, test = synth_splits(spec, data_seed)
        used = "synthetic"
    frac = float(d.get("corruption_fraction", 0.0))
    if frac > 0:
        train = corrupt_labels(train, frac, data_seed + 7919)
    return train, test, used


def build_model(cfg: RunConfig, train: Dataset) -> tuple[Model, LossCaps]:
    m = cfg.model
    caps = LossCaps(float(m.get("loss_clamp", 4.0)))
    return model_from_config(m, train.dim, train.num_classes), caps


def bound_config_for(cfg: RunConfig, n: int, caps: LossCaps) -> BoundConfig:
    spec = cfg.optimizer_spec()
    c2 = cfg.bound.get("c2", spec.family.c2 if spec.family is not None else 1.0)
    return BoundConfig(
        n=n,
        c0=caps.c0,
        c2=float(c2),
        pairs_per_step=int(cfg.bound.get("pairs_per_step", 20)),
        eval_every=int(cfg.bound.get("eval_every", 1)),
        batch_size=None if spec.full_batch else spec.batch_size,
        c_li=cfg.bound.get("c_li"),
        delta_pool_m=int(cfg.bound.get("delta_pool_m", 64)),
    )


def run_seed(cfg: RunConfig, seed: int, data_dir=None) -> SeedResult:
    train, test, source = build_data(cfg, seed, data_dir)
    model, caps = build_model(cfg, train)
    spec = cfg.optimizer_spec()
    T = cfg.steps(train.n)
    bcfg = bound_config_for(cfg, train.n, caps)
    meter_rng = rng_streams(seed, ("bound",))["bound"]
    meter = BoundMeter(model, train, bcfg, meter_rng, T, test=test,
                       track_delta=bool(cfg.bound.get("track_delta", True)),
                       track_incoherence=bool(cfg.bound.get("track_incoherence", True)))
    traj = run_training(TrainConfig(model, train, spec, T, seed), [meter])
    w = traj.w_final
    if model.is_classifier:
        tr, te = test_error(model, w, train.X, train.y), test_error(model, w, test.X, test.y)
    else:
        tr = te = float("nan")
    meta = {"T": T, "n": train.n, "param_count": model.param_count, "steps_per_epoch": traj.steps_per_epoch}
    return SeedResult(seed, meter.ledger, bcfg, tr, te, source, meta)


def _run_one(args):
    cfg, seed, data_dir = args
    return run_seed(cfg, seed, data_dir)


def run_seeds(cfg: RunConfig, seeds, data_dir=None, threads: int = 1) -> list[SeedResult]:
    """Run every seed; results are returned in seed order whatever the worker count."""
    jobs = [(cfg, s, data_dir) for s in seeds]
    if threads <= 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(_run_one, jobs))


def seed_metrics(res: SeedResult) -> dict[str, np.ndarray]:
    rows = res.ledger.rows
    ours, li = bound_series(res.ledger, res.bound_config)
    out = {
        "t": np.array([r.t for r in rows], dtype=float),
        "epoch": np.array([r.epoch for r in rows], dtype=float),
        "our_bound": ours,
        "li_bound": li,
        "train_err": np.array([r.train_err for r in rows]),
        "test_err": np.array([r.test_err for r in rows]),
        "mean_disc": np.array([r.mean_disc for r in rows]),
        "mean_grad_sq": np.array([r.mean_grad_sq for r in rows]),
        "incoh_surrogate": np.array([r.incoh_surrogate for r in rows]),
    }
    out["bound_plus_train"] = out["our_bound"] + out["train_err"]
    return out


def aggregate(results: list[SeedResult]) -> tuple[list[str], list[list[float]]]:
    """Median and interquartile range per checkpoint across seeds.

    Seeds are aligned by row index; the shortest ledger sets the length.
    Sorting inside the percentile makes the output independent of seed order.
    """
    if not results:
        raise ConfigError("no results to aggregate")
    per = [seed_metrics(r) for r in results]
    length = min(len(p["t"]) for p in per)
    header = ["t", "epoch"]
    for m in AGG_METRICS:
        header += [f"{m}_median", f"{m}_q25", f"{m}_q75"]
    rows = []
    for i in range(length):
        row = [per[0]["t"][i], per[0]["epoch"][i]]
        for m in AGG_METRICS:
            vals = np.sort(np.array([p[m][i] for p in per]))
            if np.all(np.isnan(vals)):
                row += [math.nan] * 3
            else:
                q25, med, q75 = np.nanpercentile(vals, [25, 50, 75])
                row += [float(med), float(q25), float(q75)]
        rows.append(row)
    return header, rows
