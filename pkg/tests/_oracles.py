"""Independent reference computations used by the tests.

Each oracle recomputes a quantity by a different route than the package:
explicit enumeration instead of dynamic programming, arbitrary-precision
fixed-point iteration instead of Newton steps, exhaustive path sums
instead of Monte Carlo.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np


def enumerate_levels(edges: dict, root, n_max: int) -> list[int]:
    """|T_n| by materialising every tree vertex as an explicit edge path.

    ``edges`` maps a label to the list of its out-neighbours, parallel edges
    repeated; each repetition is a distinct tree child.
    """
    level = [((), root)]
    counts = [1]
    for _ in range(n_max):
        nxt = []
        for path, lab in level:
            for k, j in enumerate(edges.get(lab, [])):
                nxt.append((path + (k,), j))
        level = nxt
        counts.append(len(level))
    return counts


def mp_first_passage(P, b, dps: int = 40, iters: int = 4000):
    """Minimal solution of ``F = b + (P F) F`` by plain monotone iteration in
    multiprecision."""
    mpmath.mp.dps = dps
    n = len(b)
    Pm = [[mpmath.mpf(float(P[i][j])) for j in range(n)] for i in range(n)]
    bm = [mpmath.mpf(float(x)) for x in b]
    F = [mpmath.mpf(0)] * n
    for _ in range(iters):
        F = [bm[i] + sum(Pm[i][j] * F[j] for j in range(n)) * F[i] for i in range(n)]
    return [float(x) for x in F]


def exact_abs_walk_expectation(n: int) -> float:
    """E|S_n| for a simple +-1 random walk, by summing over all 2^n sign
    paths."""
    codes = np.arange(2**n, dtype=np.int64)
    ones = np.zeros_like(codes)
    for bit in range(n):
        ones += (codes >> bit) & 1
    s = 2 * ones - n
    return float(np.abs(s).mean())


def entropy_by_path_enumeration(P, b, root_index: int, n: int) -> float:
    """E[-(1/n) ln pi_n(X_n)] for the walk on the cover, exactly.

    Tree vertices are identified with label paths from the root; the walk is
    propagated as an exact distribution over those paths (the root loop
    keeps the walk at the empty path).
    """
    dist = {(): 1.0}
    for _ in range(n):
        nxt: dict = {}
        for path, pr in dist.items():
            top = path[-1] if path else root_index
            back = b[top]
            tgt = path[:-1] if path else ()
            nxt[tgt] = nxt.get(tgt, 0.0) + pr * back
            for j in range(len(b)):
                if P[top][j] > 0:
                    child = path + (j,)
                    nxt[child] = nxt.get(child, 0.0) + pr * P[top][j]
        dist = nxt
    return -sum(p * math.log(p) for p in dist.values() if p > 0) / n


def first_step_law(P, b, root_index: int):
    """One-step law from the root: loop probability and forward probabilities."""
    return b[root_index], {j: P[root_index][j] for j in range(len(b)) if P[root_index][j] > 0}
