"""Run configuration: TOML documents with named hyperparameter keys and presets.

A document has top-level ``name``, ``seeds``, ``out`` and ``preset`` keys and
the tables ``[data]``, ``[model]``, ``[optimizer]``, ``[train]``, ``[bound]``
and optionally ``[sweep]``.  A ``preset`` fills every key it names before the
document's own values are applied, so a config only needs to list what it
changes.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .engine import OptimizerSpec, Schedule
from .errors import ConfigError, FormatError
from .expfam import family_by_name

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

__all__ = ["PRESETS", "RunConfig", "SweepSpec", "load_config", "parse_config", "optimizer_from_table"]

# Published training recipes for the small-image experiments, with desk-scale
# model/data substitutions recorded in `desk_note`.
PRESETS: dict[str, dict[str, Any]] = {
    # SGLD on the small-image classification task.
    "mnist_sgld": {
        "data": {"source": "auto", "n": 1000, "n_test": 2000, "dim": 20, "classes": 10, "separation": 3.0},
        "model": {"kind": "logistic", "loss_clamp": 4.0},
        "optimizer": {
            "kind": "sgld", "batch_size": 100, "eta0": 0.004, "eta_decay": 0.96, "eta_decay_every_epochs": 5,
            "beta": 5000.0,
        },
        "train": {"epochs": 50, "repeats": 30},
        "bound": {"pairs_per_step": 20, "eval_every": 5},
        "desk_note": "logistic regression replaces the CNN",
        "beta_range": [5000.0, 55000.0],
    },
    # SGLD on partially random labels.
    "random_labels": {
        "data": {"source": "auto", "n": 10000, "n_test": 2000, "dim": 20, "classes": 10, "separation": 3.0,
                 "corruption_fraction": 0.0},
        "model": {"kind": "mlp", "hidden": [256], "loss_clamp": 4.0},
        "optimizer": {
            "kind": "sgld", "batch_size": 100, "eta0": 0.005, "eta_decay": 0.995, "eta_decay_every_epochs": 30,
            "sigma_over_eta": 0.2,
        },
        "train": {"epochs": 1000, "repeats": 5},
        "bound": {"pairs_per_step": 20, "eval_every": 100},
        "desk_note": "a one-hidden-layer MLP replaces the CNN",
    },
    # Noisy sign-SGD against the sign-SGD baseline.
    "noisy_sign_sgd": {
        "data": {"source": "auto", "n": 1000, "n_test": 2000, "dim": 20, "classes": 10, "separation": 3.0},
        "model": {"kind": "logistic", "loss_clamp": 4.0},
        "optimizer": {
            "kind": "noisy_sign_sgd", "batch_size": 100, "eta0": 1e-4, "eta_decay": 0.1,
            "eta_decay_every_epochs": 30, "alpha": 0.01,
        },
        "train": {"epochs": 50, "repeats": 5},
        "bound": {"pairs_per_step": 20, "eval_every": 5},
        "desk_note": "logistic regression replaces the CNN",
    },
}

SWEEP_AXES = ("alpha", "beta", "corruption_fraction", "n")


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    replay: bool = False

    def __post_init__(self) -> None:
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis: expected one of {SWEEP_AXES}, got {self.axis!r}")
        if not self.values:
            raise ConfigError("sweep.values: empty sweep")
        vals = tuple(float(v) for v in self.values)
        inc = all(a < b for a, b in zip(vals, vals[1:]))
        dec = all(a > b for a, b in zip(vals, vals[1:]))
        if len(vals) > 1 and not (inc or dec):
            raise ConfigError("sweep.values: values must be strictly ordered")
        object.__setattr__(self, "values", vals)


@dataclass
class RunConfig:
    name: str
    seeds: list[int]
    out: str
    data: dict
    model: dict
    optimizer: dict
    train: dict
    bound: dict
    sweep: SweepSpec | None = None
    raw: dict = field(default_factory=dict)

    def optimizer_spec(self) -> OptimizerSpec:
        return optimizer_from_table(self.optimizer)

    def steps(self, n: int) -> int:
        """Training horizon in steps: ``train.steps`` or ``train.epochs`` full passes."""
        if "steps" in self.train:
            return int(self.train["steps"])
        b = n if self.optimizer.get("full_batch", False) else int(self.optimizer.get("batch_size", 100))
        return int(self.train.get("epochs", 1)) * max(1, math.ceil(n / b))

    def replace_value(self, axis: str, value: float) -> "RunConfig":
        """Copy with one sweep axis set to ``value``."""
        cfg = copy.deepcopy(self)
        if axis == "alpha":
            if cfg.optimizer.get("kind") == "sgld":
                cfg.optimizer.pop("beta", None)
                cfg.optimizer.pop("sigma", None)
                cfg.optimizer["sigma_over_eta"] = value
            else:
                cfg.optimizer["alpha"] = value
        elif axis == "beta":
            cfg.optimizer.pop("sigma_over_eta", None)
            cfg.optimizer.pop("sigma", None)
            cfg.optimizer["beta"] = value
        elif axis == "corruption_fraction":
            cfg.data["corruption_fraction"] = value
        elif axis == "n":
            cfg.data["n"] = int(value)
        return cfg


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _num(table: dict, key: str, prefix: str, default=None, positive: bool = True) -> float | None:
    if key not in table:
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{prefix}.{key}: expected a number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{prefix}.{key}: must be > 0, got {v!r}")
    return float(v)


def _schedule(table: dict, stem: str, prefix: str, required: bool = True) -> Schedule | None:
    base = _num(table, f"{stem}0", prefix) if f"{stem}0" in table else _num(table, stem, prefix)
    if base is None:
        if required:
            raise ConfigError(f"{prefix}.{stem}0: missing")
        return None
    kind = table.get(f"{stem}_schedule")
    rate = _num(table, f"{stem}_decay", prefix, 1.0)
    every = int(_num(table, f"{stem}_decay_every_epochs", prefix, 1.0))
    if kind is None:
        kind = "step_decay" if rate != 1.0 else "constant"
    try:
        return Schedule(kind, base, rate, every)
    except ConfigError as exc:
        raise ConfigError(f"{prefix}.{stem}_schedule: {exc}") from None


OPTIMIZER_KEYS = {
    "kind", "batch_size", "full_batch", "family", "eta0", "eta", "eta_decay", "eta_decay_every_epochs",
    "eta_schedule", "alpha", "alpha0", "alpha_decay", "alpha_decay_every_epochs", "alpha_schedule", "alpha_mode",
    "alpha_safety", "alpha_kappa", "alpha_min", "pool_m", "sigma", "sigma0", "sigma_decay",
    "sigma_decay_every_epochs", "sigma_schedule", "beta", "sigma_over_eta",
}


def optimizer_from_table(table: dict) -> OptimizerSpec:
    p = "optimizer"
    unknown = set(table) - OPTIMIZER_KEYS
    if unknown:
        raise ConfigError(f"{p}.{sorted(unknown)[0]}: unknown key")
    kind = table.get("kind")
    if kind is None:
        raise ConfigError(f"{p}.kind: missing")
    lr = _schedule(table, "eta", p)
    family = None
    if "family" in table:
        try:
            family = family_by_name(table["family"])
        except ValueError as exc:
            raise ConfigError(f"{p}.family: {exc}") from None
    alpha = None
    if "alpha" in table or "alpha0" in table:
        alpha = _schedule(table, "alpha", p)
    sigma = None
    if "sigma" in table or "sigma0" in table:
        sigma = _schedule(table, "sigma", p)
    try:
        return OptimizerSpec(
            kind=kind,
            lr=lr,
            batch_size=int(table.get("batch_size", 100)),
            full_batch=bool(table.get("full_batch", False)),
            family=family,
            alpha=alpha,
            alpha_mode=table.get("alpha_mode", "schedule"),
            alpha_safety=float(table.get("alpha_safety", 1.0)),
            alpha_kappa=float(table.get("alpha_kappa", 0.0)),
            alpha_min=float(table.get("alpha_min", 1e-8)),
            pool_m=int(table.get("pool_m", 64)),
            sigma=sigma,
            beta=_num(table, "beta", p),
            sigma_over_eta=_num(table, "sigma_over_eta", p),
        )
    except ConfigError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(p) else f"{p}: {msg}") from None


TOP_KEYS = {"name", "seeds", "out", "preset", "data", "model", "optimizer", "train", "bound", "sweep",
            "desk_note", "beta_range"}
DATA_KEYS = {"source", "n", "n_test", "dim", "classes", "separation", "corruption_fraction", "seed"}
MODEL_KEYS = {"kind", "hidden", "loss_clamp", "w_star", "curvature", "data_shift"}
TRAIN_KEYS = {"epochs", "steps", "repeats", "error_every"}
BOUND_KEYS = {"pairs_per_step", "eval_every", "c2", "c_li", "delta_pool_m", "track_delta", "track_incoherence"}


def _check_keys(table: dict, allowed: set, prefix: str) -> None:
    if not isinstance(table, dict):
        raise ConfigError(f"{prefix}: expected a table")
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"{prefix}.{sorted(unknown)[0]}: unknown key")


def parse_config(doc: dict) -> RunConfig:
    """Validate a parsed TOML document and apply its preset."""
    _check_keys(doc, TOP_KEYS, "config")
    preset = doc.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        doc = _merge(PRESETS[preset], doc)
    for key, allowed in (("data", DATA_KEYS), ("model", MODEL_KEYS), ("train", TRAIN_KEYS),
                         ("bound", BOUND_KEYS)):
        _check_keys(doc.get(key, {}), allowed, key)
    data = dict(doc.get("data", {}))
    if data.get("source", "auto") not in ("auto", "mnist", "synthetic"):
        raise ConfigError(f"data.source: expected auto, mnist or synthetic, got {data.get('source')!r}")
    n = data.get("n", 1000)
    if not isinstance(n, int) or n < 2:
        raise ConfigError(f"data.n: must be an integer >= 2, got {n!r}")
    frac = data.get("corruption_fraction", 0.0)
    if not 0.0 <= float(frac) <= 1.0:
        raise ConfigError(f"data.corruption_fraction: must lie in [0, 1], got {frac!r}")
    model = dict(doc.get("model", {"kind": "logistic"}))
    if model.get("kind", "logistic") not in ("logistic", "mlp", "quadratic"):
        raise ConfigError(f"model.kind: unknown model kind {model.get('kind')!r}")
    _num(model, "loss_clamp", "model")
    optimizer = dict(doc.get("optimizer", {}))
    optimizer_from_table(optimizer)
    train = dict(doc.get("train", {}))
    if "epochs" not in train and "steps" not in train:
        raise ConfigError("train.epochs: missing (or give train.steps)")
    for key in ("epochs", "steps", "error_every"):
        if key in train and (not isinstance(train[key], int) or train[key] < 0):
            raise ConfigError(f"train.{key}: must be a nonnegative integer")
    bound = dict(doc.get("bound", {}))
    for key in ("pairs_per_step", "eval_every", "delta_pool_m"):
        if key in bound and (not isinstance(bound[key], int) or bound[key] < 1):
            raise ConfigError(f"bound.{key}: must be a positive integer")
    seeds = doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds: must be a nonempty list of integers")
    sweep = None
    if "sweep" in doc:
        sw = doc["sweep"]
        _check_keys(sw, {"axis", "values", "replay"}, "sweep")
        sweep = SweepSpec(sw.get("axis", ""), tuple(sw.get("values", ())), bool(sw.get("replay", False)))
    return RunConfig(
        name=str(doc.get("name", preset or "run")),
        seeds=list(seeds),
        out=str(doc.get("out", "runs")),
        data=data,
        model=model,
        optimizer=optimizer,
        train=train,
        bound=bound,
        sweep=sweep,
        raw=doc,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = tomllib.loads(text.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config {path}: {exc}") from exc
    return parse_config(doc)
