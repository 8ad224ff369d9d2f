"""``pllbench`` command line."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .algorithms import ALGORITHMS, AlgorithmSpec
from .core import DatasetError, SplitSpec, dataset_stats, fingerprint, load_dataset, save_dataset
from .datagen import GenerationModel, SyntheticSource, apply_generation
from .harness import (RunConfig, aggregate_table, default_iterations, emit_report, load_records, run,
                      sweep)
from .selection import Criterion, SelectionError
from . import theory


def _write(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_stats(args):
    ds = load_dataset(args.dataset, args.format)
    out = dataclasses.asdict(dataset_stats(ds))
    out["name"] = ds.name
    out["fingerprint"] = fingerprint(ds)
    print(json.dumps(out, indent=2))
    return 0


def cmd_synth(args):
    if args.source != "gmm":
        raise SystemExit(f"unknown source {args.source!r}")
    src = SyntheticSource.collinear(args.q, args.d, args.spacing, args.sigma2, args.seed)
    ds = src.to_dataset(args.n, name=args.name)
    if args.gen == "uss":
        gen = GenerationModel.uss(seed=args.seed)
    else:
        gen = GenerationModel.fps(args.flip, seed=args.seed)
    ds = apply_generation(ds, gen)
    save_dataset(ds, args.out, args.format)
    print(f"wrote {ds.n} examples (q={ds.q}, d={ds.d}) to {args.out}", file=sys.stderr)
    return 0


def cmd_run(args):
    ds = load_dataset(args.dataset)
    iters = args.iters or default_iterations(ds.n)
    cfg = RunConfig(
        dataset=str(args.dataset), algorithm=AlgorithmSpec(args.alg),
        split=SplitSpec(seed=args.split_seed), lr=args.lr, batch_size=args.batch,
        weight_decay=args.wd, total_iterations=iters, eval_period=args.eval_period, seed=args.seed,
    )
    rec = run(cfg, ds)
    _write(rec.dumps() + "\n", args.out)
    return 0 if not rec.failed else 3


def cmd_sweep(args):
    ds = load_dataset(args.dataset)
    algs = [a for a in args.alg.split(",") if a]
    total = 0
    for alg in algs:
        recs = sweep(ds, alg, args.configs, args.splits, args.seed, out_dir=args.out,
                     workers=args.workers, total_iterations=args.iters,
                     eval_period=args.eval_period, dataset_ref=str(args.dataset))
        failed = sum(r.failed for r in recs)
        total += len(recs)
        print(f"{alg}: {len(recs)} runs, {failed} failed", file=sys.stderr)
    print(f"wrote {total} records to {args.out}", file=sys.stderr)
    return 0


def cmd_report(args):
    records = load_records(args.input)
    if not records:
        raise SystemExit(f"no records found in {args.input}")
    criteria = [args.criterion] if args.criterion else None
    rows = aggregate_table(records, criteria)
    _write(emit_report(rows, args.format), args.out)
    return 0


def cmd_validate_theory(args):
    which = args.which or None
    report = theory.run_suite(which, n=args.n, seed=args.seed)
    ok = theory.suite_passed(report)
    text = json.dumps({"pass": ok, "checks": report}, indent=2) + "\n"
    _write(text, args.out)
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="pllbench", description="Partial-label learning benchmark harness.")
    p.add_argument("--version", action="version", version=f"pllbench {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stats", help="summary statistics of a dataset file")
    s.add_argument("dataset")
    s.add_argument("--format", choices=["jsonl", "csv"])
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("synth", help="write a synthetic partial-label dataset")
    s.add_argument("--source", default="gmm", choices=["gmm"])
    s.add_argument("--gen", default="uss", choices=["uss", "fps"])
    s.add_argument("--flip", type=float, default=0.3)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--q", type=int, default=3)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--spacing", type=float, default=4.0)
    s.add_argument("--sigma2", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--name", default="gmm")
    s.add_argument("--format", choices=["jsonl", "csv"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="train one configuration")
    s.add_argument("--dataset", required=True)
    s.add_argument("--alg", required=True, choices=ALGORITHMS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch", type=int, default=128)
    s.add_argument("--wd", type=float, default=1e-5)
    s.add_argument("--iters", type=int)
    s.add_argument("--eval-period", type=int, default=1000)
    s.add_argument("--out")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="random search over configurations and splits")
    s.add_argument("--dataset", required=True)
    s.add_argument("--alg", required=True, help="algorithm id, or several separated by commas")
    s.add_argument("--configs", type=int, default=20)
    s.add_argument("--splits", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iters", type=int)
    s.add_argument("--eval-period", type=int, default=1000)
    s.add_argument("--workers", type=int, help="defaults to $PLLBENCH_WORKERS or 1")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", help="aggregate sweep records")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--criterion", choices=[c.value for c in Criterion])
    s.add_argument("--format", default="csv", choices=["csv", "json", "md"])
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("validate-theory", help="Monte Carlo checks of the selection criteria")
    s.add_argument("--which", action="append", choices=list(theory.CHECKS))
    s.add_argument("--n", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_validate_theory)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DatasetError, SelectionError, ValueError, FileNotFoundError) as err:
        print(f"pllbench: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
