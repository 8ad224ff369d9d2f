#!/usr/bin/env python3
"""How candidate sets are generated.

Walks through the two generation models on a small label space:

  * USS draws one set uniformly among all sets that contain the true label
    (the full label set is left out by default),
  * FPS flips each wrong label into the set independently.

For each model it prints the exact set table, the ambiguity degree, whether
the set distribution factorizes as C(S) * [y in S], and an empirical check
against a million draws.

    python3 demos/01_candidate_sets.py
"""

import numpy as np

from pllbench.datagen import (GenerationModel, ambiguity_degree, factorizes, generate_candidate_masks,
                              set_distribution)

Q = 3
N = 1_000_000


def show(name, model):
    table = set_distribution(model, Q)
    print(f"\n== {name} ==")
    print(f"ambiguity degree: {ambiguity_degree(model, Q):.4f}   factorizes: {factorizes(model, Q)}")

    y = 0
    masks = generate_candidate_masks(np.full(N, y), Q, model)
    codes = (masks * (1 << np.arange(Q))).sum(axis=1)
    freq = np.bincount(codes, minlength=2 ** Q) / N
    print(f"true label {y}:   set          exact    empirical")
    for code in range(1, 2 ** Q):
        if table[y, code] == 0 and freq[code] == 0:
            continue
        labels = [j for j in range(Q) if code >> j & 1]
        print(f"                 {str(labels):12s} {table[y, code]:.4f}   {freq[code]:.4f}")
    print(f"average set size: {masks.sum(axis=1).mean():.3f}")


show("USS", GenerationModel.uss(seed=1))
show("FPS, flip 0.5", GenerationModel.fps(0.5, seed=2))
show("FPS, flip 0.1", GenerationModel.fps(0.1, seed=3))

# a label-dependent flip matrix no longer factorizes, which is the
# situation where the approximated accuracy loses its guarantee
skewed = np.array([[0, 0.9, 0.1], [0.1, 0, 0.9], [0.9, 0.1, 0]])
show("FPS, skewed flip matrix", GenerationModel.fps(skewed, seed=4))
