"""Brute-force ranking oracle: enumerates orderings instead of sorting."""
from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def brute_force_ranks(values, higher_better: bool) -> list[float]:
    """Average rank of each element across every ordering consistent with its value."""
    n = len(values)
    key = [-v if higher_better else v for v in values]
    totals = [0.0] * n
    count = 0
    for perm in itertools.permutations(range(n)):
        if all(key[perm[k]] <= key[perm[k + 1]] for k in range(n - 1)):
            count += 1
            for pos, i in enumerate(perm, 1):
                totals[i] += pos
    return [t / count for t in totals]


def pairwise_ranks(values, higher_better: bool) -> list[float]:
    """1 + (number strictly better) + (number tied, excluding self) / 2."""
    key = [-v if higher_better else v for v in values]
    return [1 + sum(k < ki for k in key) + (sum(k == ki for k in key) - 1) / 2 for ki in key]


def brute_force_overall(values, directions, categories, ranker=brute_force_ranks) -> list[float]:
    values = np.asarray(values, dtype=float)
    ranks = {j: ranker(list(values[:, j]), d == "higher_better") for j, d in enumerate(directions)}
    cats = sorted(set(categories))
    out = []
    for i in range(values.shape[0]):
        per_cat = [[Fraction(ranks[j][i]) for j, c in enumerate(categories) if c == cat] for cat in cats]
        out.append(float(sum(sum(v) / len(v) for v in per_cat) / len(per_cat)))
    return out
