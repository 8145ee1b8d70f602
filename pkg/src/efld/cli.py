"""``efld-lab``: train, sweep, verify and plot from the command line.

Exit codes: 0 success, 1 configuration or usage error, 2 I/O or file format,
3 numeric failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bounds import CSV_COLUMNS, format_value, bound_series, ledger_table, read_ledger_csv, replay_ledger, write_ledger_csv
from .config import RunConfig, SweepSpec, load_config
from .data import data_dir_from_env
from .errors import ConfigError, EfldError
from .experiments import SeedResult, aggregate, run_seeds
from .suites import SuiteReport, run_suite
from .svgplot import Series, line_chart, write_svg

__all__ = ["main", "parse_seeds"]

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration code instead of argparse's 2 (reserved for I/O)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"usage: {message}")


def parse_seeds(text: str) -> list[int]:
    """``"0..4"`` (inclusive range), ``"3"`` or ``"0,2,5"``."""
    text = text.strip()
    m = re.fullmatch(r"(\d+)\.\.(\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise ConfigError(f"--seeds: empty range {text!r}")
        return list(range(lo, hi + 1))
    try:
        seeds = [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"--seeds: expected 'a..b' or a comma list of integers, got {text!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise ConfigError(f"--seeds: seeds must be nonnegative integers, got {text!r}")
    return seeds


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seeds is not None:
        cfg.seeds = parse_seeds(args.seeds)
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _run_meta(cfg: RunConfig, results: list[SeedResult]) -> dict:
    first = results[0]
    bc = first.bound_config
    return {
        "name": cfg.name,
        "version": __version__,
        "seeds": [r.seed for r in results],
        "data_source": first.source,
        "desk_note": cfg.raw.get("desk_note", ""),
        "n": bc.n,
        "T": first.meta["T"],
        "param_count": first.meta["param_count"],
        "bound_constant_c": bc.c,
        "li_constant": bc.li_constant,
        "li_constant_note": "li_bound uses the discrepancy bound's constant unless bound.c_li is set",
        "c0": bc.c0,
        "c2": bc.c2,
        "config": cfg.raw,
    }


def _agg_columns(header: list[str], rows: list[list[float]]) -> dict[str, np.ndarray]:
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {h: arr[:, i] for i, h in enumerate(header)}


def _train_plots(out: Path, agg: dict[str, np.ndarray], name: str) -> list[Path]:
    x = agg["epoch"]
    panels = (
        ("bound.svg", "bound", [("our_bound", False), ("li_bound", True)], True),
        ("train_err.svg", "train error", [("train_err", False)], False),
        ("test_err.svg", "test error", [("test_err", False)], False),
        ("bound_plus_train.svg", "bound + train error", [("bound_plus_train", False), ("test_err", True)], False),
        ("gradients.svg", "per-example gradient statistics",
         [("mean_grad_sq", False), ("mean_disc", False), ("incoh_surrogate", True)], True),
    )
    written = []
    for fname, ylabel, cols, log_y in panels:
        series = [Series(f"{c} (median)", x, agg[f"{c}_median"], dashed) for c, dashed in cols
                  if np.any(np.isfinite(agg[f"{c}_median"]))]
        if not series:
            continue
        if log_y and not any(np.any(s.y > 0) for s in series):
            log_y = False
        written.append(write_svg(out / fname, line_chart(series, f"{name}: {ylabel}", "epoch", ylabel, log_y)))
    return written


def _train_results(cfg: RunConfig, data_dir, threads: int) -> list[SeedResult]:
    return run_seeds(cfg, cfg.seeds, data_dir, threads)


def _summary(results: list[SeedResult]) -> str:
    ours = [bound_series(r.ledger, r.bound_config)[0][-1] for r in results]
    tr = [r.final_train_err for r in results]
    te = [r.final_test_err for r in results]
    return (f"seeds={len(results)} median final our_bound={np.median(ours):.6g} "
            f"train_err={np.median(tr):.4f} test_err={np.median(te):.4f}")


def cmd_train(args) -> int:
    cfg = _load(args)
    data_dir = data_dir_from_env(args.data_dir)
    results = _train_results(cfg, data_dir, args.threads)
    out = Path(cfg.out)
    for r in results:
        write_ledger_csv(out / f"seed_{r.seed}.csv", r.ledger, r.bound_config)
    header, rows = aggregate(results)
    _write_rows(out / "aggregate.csv", header, rows)
    _train_plots(out, _agg_columns(header, rows), cfg.name)
    _write_json(out / "meta.json", _run_meta(cfg, results))
    print(f"{cfg.name}: {_summary(results)}")
    print(f"wrote {out}")
    return EXIT_OK


def _sweep_results(cfg: RunConfig, data_dir, threads: int) -> list[tuple[float, list[SeedResult]]]:
    sweep = cfg.sweep
    if not sweep.replay:
        return [(v, _train_results(cfg.replace_value(sweep.axis, v), data_dir, threads)) for v in sweep.values]
    if sweep.axis not in ("n", "alpha"):
        raise ConfigError(f"sweep.replay: ledger replay supports the n and alpha axes, not {sweep.axis!r}")
    base = _train_results(cfg, data_dir, threads)
    out = []
    for v in sweep.values:
        runs = []
        for r in base:
            if sweep.axis == "n":
                # Same ledger, bound constants evaluated at a different sample size.
                bc = replace(r.bound_config, n=int(v))
                runs.append(SeedResult(r.seed, r.ledger, bc, r.final_train_err, r.final_test_err, r.source, r.meta))
            else:
                # Values are multipliers of the trained alpha schedule.
                runs.append(SeedResult(r.seed, replay_ledger(r.ledger, v), r.bound_config, r.final_train_err,
                                       r.final_test_err, r.source, r.meta))
        out.append((v, runs))
    return out


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.axis is not None or args.values is not None:
        if args.axis is None or args.values is None:
            raise ConfigError("sweep: --axis and --values must be given together")
        try:
            values = tuple(float(v) for v in args.values.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"--values: expected a comma list of numbers, got {args.values!r}") from None
        cfg.sweep = SweepSpec(args.axis, values, args.replay)
    if cfg.sweep is None:
        raise ConfigError("sweep: the config has no [sweep] table and no --axis/--values were given")
    data_dir = data_dir_from_env(args.data_dir)
    arms = _sweep_results(cfg, data_dir, args.threads)
    out = Path(cfg.out)
    long_rows, series = [], []
    for v, results in arms:
        for r in results:
            for row in ledger_table(r.ledger, r.bound_config):
                long_rows.append((cfg.sweep.axis, v, r.seed, *row))
        header, rows = aggregate(results)
        agg = _agg_columns(header, rows)
        series.append(Series(f"{cfg.sweep.axis}={v:g}", agg["epoch"], agg["our_bound_median"]))
        print(f"{cfg.sweep.axis}={v:g}: {_summary(results)}")
    _write_rows(out / "sweep.csv", ("axis", "value", "seed", *CSV_COLUMNS), long_rows)
    log_y = all(np.all(s.y[np.isfinite(s.y)] > 0) for s in series)
    write_svg(out / "sweep_bound.svg",
              line_chart(series, f"{cfg.name}: our_bound by {cfg.sweep.axis}", "epoch", "our_bound", log_y))
    _write_json(out / "meta.json", {**_run_meta(cfg, arms[0][1]), "sweep": {
        "axis": cfg.sweep.axis, "values": list(cfg.sweep.values), "replay": cfg.sweep.replay}})
    print(f"wrote {out}")
    return EXIT_OK


def _print_report(rep: SuiteReport) -> None:
    for c in rep.checks:
        print(c.line())
    for k, v in rep.elapsed.items():
        print(f"time  {k}: {v:.2f}s")


def _write_margins(path: Path, rep: SuiteReport) -> Path:
    return _write_rows(path, ("suite", "check", "trial", "id", "margin"), rep.margins)


def cmd_verify(args) -> int:
    rep = run_suite(args.suite, args.seed)
    _print_report(rep)
    if args.out is not None:
        _write_margins(Path(args.out) / f"verify_{args.suite}_margins.csv", rep)
    ok = rep.passed
    print("ALL PASS" if ok else "VERIFICATION FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_verify_divergences(args) -> int:
    rep = SuiteReport()
    for name in ("divergences", "mixture", "lsd_bound"):
        rep.extend(run_suite(name, args.seed))
    _print_report(rep)
    out = Path(args.out if args.out is not None else ".")
    _write_margins(out / "divergence_margins.csv", rep)
    ok = rep.passed
    print("ALL PASS" if ok else "VERIFICATION FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_plot(args) -> int:
    ycols = [c for c in args.y.split(",") if c]
    if not ycols:
        raise ConfigError("--y: at least one column is required")
    series = []
    for path in args.csv:
        cols = read_ledger_csv(path, required=[args.x, *ycols])
        for c in ycols:
            label = c if len(args.csv) == 1 else f"{Path(path).stem}:{c}"
            series.append(Series(label, cols[args.x], cols[c]))
    title = args.title if args.title is not None else ", ".join(ycols)
    svg = line_chart(series, title, args.x, ycols[0] if len(ycols) == 1 else "value", args.log)
    out = Path(args.out if args.out is not None else ".") / args.name
    write_svg(out, svg)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="efld-lab", description="Noisy-gradient training with generalization-bound tracking.")
    p.add_argument("--version", action="version", version=f"efld-lab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_opts(sp):
        sp.add_argument("--config", required=True, help="TOML run config")
        sp.add_argument("--data-dir", default=None, help="MNIST IDX directory (default: $EFLD_DATA_DIR)")
        sp.add_argument("--out", default=None, help="output directory (overrides the config)")
        sp.add_argument("--seeds", default=None, help="'0..k' inclusive, or a comma list")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for seeds")

    sp = sub.add_parser("train", help="train every seed and write ledgers, aggregate CSV and SVGs")
    run_opts(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="one training run per sweep value; long CSV and overlay SVG")
    run_opts(sp)
    sp.add_argument("--axis", default=None, help="alpha, beta, corruption_fraction or n")
    sp.add_argument("--values", default=None, help="comma list, strictly ordered")
    sp.add_argument("--replay", action="store_true", help="reuse one ledger (n and alpha axes only)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify", help="run a property suite; exit 4 if any check fails")
    sp.add_argument("suite", help="divergences, lsd_bound, mixture, lemmas, gradients, convergence or all")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="directory for the per-trial margins CSV")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("verify-divergences", help="divergence, mixture and LSD-bound suites plus margins CSV")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="directory for divergence_margins.csv (default: .)")
    sp.set_defaults(func=cmd_verify_divergences)

    sp = sub.add_parser("plot", help="SVG line chart from ledger-schema CSVs")
    sp.add_argument("csv", nargs="+")
    sp.add_argument("--x", default="epoch")
    sp.add_argument("--y", default="our_bound", help="comma list of columns")
    sp.add_argument("--log", action="store_true", help="log-scale y axis")
    sp.add_argument("--title", default=None)
    sp.add_argument("--name", default="plot.svg", help="output file name")
    sp.add_argument("--out", default=None, help="output directory (default: .)")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except EfldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
