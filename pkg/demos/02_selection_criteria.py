#!/usr/bin/env python3
"""Why the covering rate and the approximated accuracy can stand in for validation accuracy.

Only candidate sets are available on a partial-label validation split, so a
model can't be scored against true labels. This walkthrough uses a
Gaussian mixture whose posterior is known and replaces training with
oracle classifiers:

  1. the Bayes classifier, scored by AA: AA tracks the true accuracy,
  2. Bayes predictions corrupted at growing rates, scored by CR: accuracy
     is an affine function of CR, so CR ranks classifiers correctly,
  3. the gap between CR and accuracy stays under (1 - ACC) times the ambiguity degree.

    python3 demos/02_selection_criteria.py [n]
"""

import sys

from pllbench.datagen import GenerationModel
from pllbench.theory import (OracleClassifier, default_source, draw_sample, validate_prop1,
                             validate_thm_aa, validate_thm_cr)

n = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
src = default_source()
rates = (0.0, 0.2, 0.4)
print(f"source: 3 collinear unit-variance Gaussians, Bayes accuracy {src.bayes_accuracy():.4f}, n={n}")

print("\n-- 1. AA against accuracy for the Bayes classifier")
for name, gen in [("USS", GenerationModel.uss(seed=1)), ("FPS 0.5", GenerationModel.fps(0.5, seed=2))]:
    r = validate_thm_aa(src, gen, n, seed=0)
    e = r["estimates"]
    print(f"{name:8s} AA={e['aa']:.4f}  ACC={e['acc']:.4f}  diff={e['diff']:+.4f}  -> {r['status']}")

# the same check with a classifier that ignores x: AA is now just the
# chance that label 0 is a candidate, far from the accuracy
r = validate_thm_aa(src, GenerationModel.uss(seed=1), n, classifier=OracleClassifier.constant(0))
e = r["estimates"]
print(f"constant AA={e['aa']:.4f}  ACC={e['acc']:.4f}  -> {r['status']} (expected: not a posterior)")

print("\n-- 2. CR ranks classifiers like accuracy does")
clfs = [OracleClassifier.corrupted(src.posterior, rate, seed=1) for rate in rates]
for name, gen in [("FPS 0.5", GenerationModel.fps(0.5, seed=2)), ("USS", GenerationModel.uss(seed=1))]:
    r = validate_thm_cr(src, gen, clfs, n, seed=0)
    c = r["setup"]["c"]
    print(f"{name}: c={c:.4f}")
    for rate, row in zip(rates, r["estimates"]["classifiers"]):
        print(f"  corruption {rate:.1f}: CR={row['cr']:.4f}  ACC={row['acc']:.4f}  "
              f"(CR - c)/(1 - c)={row['implied_acc']:.4f}")
    print("  pairwise order:", [p["status"] for p in r["estimates"]["pairs"]])

print("\n-- 3. gap between CR and accuracy")
print("generation  corruption   gap      bound    3 sigma")
for name, gen in [("USS", GenerationModel.uss(seed=1)), ("FPS 0.5", GenerationModel.fps(0.5, seed=2))]:
    s = draw_sample(src, gen, n, seed=0)
    for rate in rates:
        r = validate_prop1(src, gen, OracleClassifier.corrupted(src.posterior, rate, seed=1), sample=s)
        print(f"{name:10s}  {rate:.1f}          {r['estimates']['gap']:.4f}   {r['bound']:.4f}   "
              f"{3 * r['sigma']:.4f}   {'ok' if r['pass'] else 'VIOLATED'}")
