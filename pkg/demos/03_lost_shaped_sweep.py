#!/usr/bin/env python3
"""A benchmark sweep on synthetic data shaped like the Lost dataset.

The real Lost file isn't shipped, so this builds a stand-in with the same
shape: 1122 examples, 108 features, 16 classes, and FPS candidate sets with
about 2.23 labels on average (flip rate 1.23 / 15). It then runs the full
protocol for two algorithms (random search over splits and configurations)
and prints the accuracy table under each selection criterion.

The default budget is small so the demo finishes in a few minutes on one
core. Pass ``--iters 10000 --eval-period 1000 --configs 5 --splits 5`` for the desk-scale
protocol, and set PLLBENCH_WORKERS to use more cores.

    python3 demos/03_lost_shaped_sweep.py [--iters N] [--eval-period P] [--configs K] [--splits S]
"""

import argparse
import time

from pllbench.core import dataset_stats
from pllbench.datagen import GenerationModel, SyntheticSource, apply_generation
from pllbench.harness import CheckpointAudit, aggregate, aggregate_table, emit_report, sweep

ap = argparse.ArgumentParser()
ap.add_argument("--iters", type=int, default=3000)
ap.add_argument("--eval-period", type=int, default=500)
ap.add_argument("--configs", type=int, default=2)
ap.add_argument("--splits", type=int, default=2)
ap.add_argument("--algs", default="proden,cc")
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

# a large variance puts the Bayes accuracy near 0.76, so
# the task is about as hard as the real one
src = SyntheticSource.random(16, 108, scale=1.0, sigma2=16.0, seed=args.seed)
ds = apply_generation(src.to_dataset(1122, name="lost-shaped", seed=args.seed),
                      GenerationModel.fps(1.23 / 15, seed=args.seed))
st = dataset_stats(ds)
print(f"dataset: n={st.n} d={st.d} q={st.q} avg |S|={st.avg_candidates:.3f} "
      f"Bayes accuracy {src.bayes_accuracy(n_mc=100_000):.3f}")

records = []
t = time.perf_counter()
for alg in args.algs.split(","):
    recs = sweep(ds, alg, n_configs=args.configs, n_splits=args.splits, base_seed=args.seed,
                 total_iterations=args.iters, eval_period=args.eval_period)
    print(f"{alg}: {len(recs)} runs, {sum(r.failed for r in recs)} failed, "
          f"{time.perf_counter() - t:.0f}s so far")
    records += recs

print()
print(emit_report(aggregate_table(records), "md"))

# the OA column only ever looks at the last checkpoint of each run
audit = CheckpointAudit()
for alg in args.algs.split(","):
    aggregate([r for r in records if r.config.algorithm.id == alg], "oa", audit=audit)
print(f"OA aggregation read {audit.reads} checkpoints for {len(records)} runs")
