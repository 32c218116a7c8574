"""Batch command-line front end: train, eval, sweep, export-curves."""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .metrics import class_distribution_vs_threshold, dominant_class_ratio_curve
from .trainer import (
    CheckpointError,
    NumericalError,
    RunConfig,
    evaluate,
    load_checkpoint,
    make_datasets,
    teacher_labels,
    train,
)

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CHECKPOINT = 4
EXIT_NUMERIC = 5

CURVE_GRID = tuple(np.round(np.linspace(0.0, 1.0, 21), 2))


class ConfigError(ValueError):
    pass


def _parse_overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"expected key=value override, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path: str | None, overrides: list[str], seed: int | None = None) -> RunConfig:
    try:
        cfg = RunConfig.from_file(path) if path else RunConfig()
        pairs = _parse_overrides(overrides)
        if seed is not None:
            pairs["seed"] = str(seed)
        return cfg.with_overrides(pairs)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def parse_grid(specs: list[str]) -> list[dict[str, str]]:
    axes = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"grid axis must look like key=v1,v2,...; got {spec!r}")
        key, values = spec.split("=", 1)
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"grid axis {key!r} has no values")
        axes.append([(key.strip(), v) for v in vals])
    return [dict(combo) for combo in itertools.product(*axes)] if axes else [{}]


def _run_one(args: tuple[RunConfig, str | None]) -> dict:
    cfg, out = args
    report = train(cfg, out_dir=out)
    frechets = [e["frechet"] for e in report.evals]
    return {
        "seed": cfg.seed,
        "final": report.final,
        "best_frechet": min(frechets) if frechets else float("nan"),
    }


def aggregate(results: list[dict]) -> dict[str, float]:
    def stat(values):
        arr = np.asarray(values, dtype=np.float64)
        return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0

    out = {"runs": len(results)}
    for name, values in (
        ("last_frechet", [r["final"]["frechet"] for r in results]),
        ("best_frechet", [r["best_frechet"] for r in results]),
        ("accuracy", [r["final"]["accuracy"] for r in results]),
        ("coverage", [r["final"]["coverage"] for r in results]),
    ):
        out[f"{name}_mean"], out[f"{name}_std"] = stat(values)
    return out


def cmd_train(args) -> int:
    explicit = args.config or args.overrides or args.seed is not None
    if args.resume and not explicit:
        # without other settings, continue with the checkpoint's own config
        cfg = load_checkpoint(args.resume).config
    else:
        cfg = load_config(args.config, args.overrides, args.seed)
    out = Path(args.out or f"runs/seed{cfg.seed}")
    report = train(cfg, out_dir=out, resume_from=args.resume)
    print(json.dumps({"out": str(out), "final": report.final}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    metrics = evaluate(state, make_datasets(state.config))
    text = json.dumps(metrics, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_sweep(args) -> int:
    base = load_config(args.config, args.overrides)
    points = parse_grid(args.grid)
    out = Path(args.out or "sweep")
    jobs = []
    for point in points:
        tag = "_".join(f"{k}={v}" for k, v in point.items()) or "base"
        for s in range(args.seeds):
            try:
                cfg = base.with_overrides({**point, "seed": str(base.seed + s)})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid grid point {point}: {exc}") from exc
            jobs.append((tag, point, (cfg, str(out / tag / f"seed{cfg.seed}"))))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, [j[2] for j in jobs]))
    else:
        results = [_run_one(j[2]) for j in jobs]

    rows = []
    for tag, point in dict.fromkeys((j[0], tuple(j[1].items())) for j in jobs):
        group = [r for j, r in zip(jobs, results) if j[0] == tag]
        rows.append({"point": tag, **dict(point), **aggregate(group)})
    out.mkdir(parents=True, exist_ok=True)
    fields = list(dict.fromkeys(k for row in rows for k in row))
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    for row in rows:
        print(f"{row['point']:<32} runs={row['runs']}  "
              f"last FD {row['last_frechet_mean']:.4f}±{row['last_frechet_std']:.4f}  "
              f"best FD {row['best_frechet_mean']:.4f}±{row['best_frechet_std']:.4f}  "
              f"acc {row['accuracy_mean']:.3f}±{row['accuracy_std']:.3f}  "
              f"cov {row['coverage_mean']:.2f}")
    return 0


def cmd_export_curves(args) -> int:
    state = load_checkpoint(args.checkpoint)
    cfg = state.config
    held_out = make_datasets(cfg).held_out
    labels, rel = teacher_labels(held_out.x, state.teacher)
    out = Path(args.out or "curves")
    out.mkdir(parents=True, exist_ok=True)
    curve = dominant_class_ratio_curve(held_out.y, labels, rel, CURVE_GRID)
    with open(out / "dominant_ratio.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "dominant_ratio", "selected", "group_sizes"])
        for th, v, n, sizes in zip(curve.thresholds, curve.values, curve.counts, curve.group_sizes):
            w.writerow([th, "undefined" if np.isnan(v) else repr(float(v)), n, json.dumps(sizes, sort_keys=True)])
    with open(out / "class_distribution.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["artificial_label", "threshold"] + [f"class_{j}" for j in range(cfg.n_components)])
        for label in range(cfg.n_classes):
            dist = class_distribution_vs_threshold(held_out.y, labels, rel, CURVE_GRID, label, cfg.n_components)
            for th, row in zip(CURVE_GRID, dist):
                w.writerow([label, th] + ["undefined" if np.isnan(x) else repr(float(x)) for x in row])
    print(str(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unigan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one seeded training run")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--resume", metavar="CHECKPOINT", help="continue a run from its last.ckpt")
    t.add_argument("overrides", nargs="*", metavar="key=value")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="recompute metrics from a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="grid of runs over several seeds")
    s.add_argument("--config")
    s.add_argument("--grid", action="append", default=[], metavar="key=v1,v2,...")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("overrides", nargs="*", metavar="key=value")
    s.set_defaults(func=cmd_sweep)

    x = sub.add_parser("export-curves", help="write threshold curves from a checkpoint")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--out")
    x.set_defaults(func=cmd_export_curves)
    return p


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"error: checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NumericalError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run_cli())
