"""Built-in base graphs, including procedurally generated infinite ones.

Every generator is a pure function of its parameters (``rwdcre`` also of its
seed). Labels are ints for the line-like graphs and tuples for
``oscillating_growth``.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Mapping

import numpy as np

from .errors import SpecError
from .graph import BaseGraph, FiniteGraph, GeneratorGraph, expand_multiedges, validate_spec

GENERATORS = (
    "halfline_critical",
    "two_sided_line",
    "homesick",
    "oscillating_growth",
    "rwdcre",
    "homogeneous_tree",
)


def _as_list(x) -> list[float]:
    if isinstance(x, str):
        return [float(t) for t in x.split(",") if t.strip()]
    if isinstance(x, (list, tuple)):
        return [float(t) for t in x]
    return [float(x)]


# ---------------------------------------------------------------------------
# finite constructions


def dary_multigraph_spec(d: int, beta: float, epsilon: float = 1e-6) -> dict:
    """One vertex carrying ``d`` loops; its cover is the rooted d-ary tree."""
    if d < 1:
        raise SpecError("d must be >= 1")
    return {
        "epsilon": epsilon,
        "kernel": "pg",
        "root": "o",
        "vertices": ["o"],
        "edges": [{"from": "o", "to": "o", "pg": 1.0 / d, "multiplicity": 1}] * d,
        "backward": {"o": beta},
    }


def homogeneous_tree(d: int = 2, beta: float = 0.25, epsilon: float = 1e-6) -> FiniteGraph:
    """Expanded single-cone-type cover: every vertex has ``d`` children and
    backward probability ``beta``."""
    g = validate_spec(expand_multiedges(dary_multigraph_spec(int(d), float(beta), epsilon)))
    g.name = "homogeneous_tree"
    return g


def homesick_graph(g: FiniteGraph, lam: float) -> FiniteGraph:
    """Homesick walk over ``g``: uniform forward kernel and
    ``p(-i) = lam / (lam + outdeg(i))``, so that ``M = A / lam``."""
    if lam <= 0:
        raise SpecError("homesick parameter must be positive")
    edges = {}
    backward = {}
    for i in g.vertices:
        row = g.out_edges(i)
        k = len(row)
        edges[i] = [(j, 1.0 / k) for j, _ in row]
        backward[i] = lam / (lam + k)
    eps = min(g.epsilon, 0.5 * min(min(backward.values()), 1 - max(backward.values())))
    out = FiniteGraph(g.root, g.vertices, edges, backward, epsilon=eps, name="homesick")
    return out


def homesick(lam: float = 2.0, d: int = 2) -> FiniteGraph:
    base = homogeneous_tree(int(d), 0.5)
    return homesick_graph(base, float(lam))


# ---------------------------------------------------------------------------
# infinite line-like graphs


def halfline_critical(epsilon: float = 0.1) -> GeneratorGraph:
    """Critical half-line: ``lambda+(M) = 1`` yet the walk on the cover is
    transient. Vertices are 0, 1, 2, ...; ``m(i, i+1) = (1 + 1/i)^2`` and
    ``m(i, i-1) = 3^-i``."""

    def backward(i):
        if i == 0:
            return 1.0 / 3.0
        return 1.0 / (1.0 + (1.0 + 1.0 / i) ** 2 + (1.0 / 3.0) ** i)

    def row(i):
        if i < 0:
            raise ValueError("negative label")
        if i == 0:
            return [(1, 2.0 / 3.0)]
        b = backward(i)
        up = b * (1.0 + 1.0 / i) ** 2
        down = b * (1.0 / 3.0) ** i
        if down == 0.0:
            # 3^-i underflows past i ~ 678; the edge can never be sampled
            return [(i + 1, 1.0 - b)]
        return [(i + 1, up), (i - 1, down)]

    def preds(i):
        return [k for k in (i - 1, i + 1) if k >= 0]

    return GeneratorGraph(
        "halfline_critical", {"epsilon": epsilon}, 0, row, backward, epsilon,
        degree_bound=2, kernel="tree", predecessors_fn=preds,
    )


def two_sided_line(
    p: float = 0.7, q: float = 0.8, c1: float = 0.1, c2: float = 0.2, epsilon: float = 0.01
) -> GeneratorGraph:
    """The integers with drift away from 0 on both sides; backward
    probability ``c1`` on labels >= 0 and ``c2`` on labels < 0."""
    for name, v in (("p", p), ("q", q)):
        if not 0 < v < 1:
            raise SpecError(f"{name} must lie in (0, 1)")

    def backward(i):
        return c1 if i >= 0 else c2

    def row(i):
        if i == 0:
            return [(1, 0.5), (-1, 0.5)]
        if i > 0:
            return [(i + 1, p), (i - 1, 1.0 - p)]
        return [(i + 1, 1.0 - q), (i - 1, q)]

    params = {"p": p, "q": q, "c1": c1, "c2": c2, "epsilon": epsilon}
    return GeneratorGraph(
        "two_sided_line", params, 0, row, backward, epsilon,
        degree_bound=2, predecessors_fn=lambda i: [i - 1, i + 1],
    )


# ---------------------------------------------------------------------------
# oscillating growth: glued circles and binary trees


@lru_cache(maxsize=None)
def _k(n: int) -> int:
    """k_1 = 2, k_{n+1} = 3 * (k_1 + ... + k_n)."""
    if n == 1:
        return 2
    return 3 * sum(_k(m) for m in range(1, n))


def oscillating_growth(backward: float = 1.0 / 3.0, epsilon: float = 1e-6) -> GeneratorGraph:
    """Infinite graph whose cover has no growth rate.

    Built from blocks ``G_n``: for odd ``n`` a directed circle on ``k_n``
    vertices, for even ``n`` a binary tree of height ``k_n - 1`` whose leaves
    are chained by directed paths of length ``k_{n+1}``, the last one leading
    back to the extra vertex ``o_n`` above the tree root. The end point of each
    circle is ``o_{n+1}`` of the next tree block and every leaf of a tree block
    is the starting point of a fresh circle. Copies are addressed by the tuple
    of leaf indices chosen so far.

    Labels:
      ``("C", n, cid, idx)``  circle vertex, idx in 1..k_n (leaf / o-vertex when glued)
      ``("T", n, cid, depth, pos)`` interior tree vertex, depth < k_n - 1
      ``("P", n, cid, leaf, step)`` interior path vertex, step in 1..k_{n+1}-1
    """
    root = ("C", 1, (), 1)

    def row(v):
        kind = v[0]
        if kind == "C":
            _, n, cid, idx = v
            kn = _k(n)
            out = []
            if idx < kn:
                out.append(("C", n, cid, idx + 1))
            else:
                out.append(("C", n, cid, 1))
                out.append(("T", n + 1, cid, 0, 0))
            if idx == 1 and n >= 3:
                out.append(("P", n - 1, cid[:-1], cid[-1], 1))
        elif kind == "T":
            _, n, cid, depth, pos = v
            if depth + 1 < _k(n) - 1:
                out = [("T", n, cid, depth + 1, 2 * pos), ("T", n, cid, depth + 1, 2 * pos + 1)]
            else:
                out = [("C", n + 1, cid + (2 * pos + 1,), 1), ("C", n + 1, cid + (2 * pos + 2,), 1)]
        elif kind == "P":
            _, n, cid, leaf, step = v
            if step < _k(n + 1) - 1:
                out = [("P", n, cid, leaf, step + 1)]
            elif leaf < 2 ** (_k(n) - 1):
                out = [("C", n + 1, cid + (leaf + 1,), 1)]
            else:
                out = [("C", n - 1, cid, _k(n - 1))]
        else:
            raise ValueError(f"bad label {v!r}")
        w = 1.0 / len(out)
        return [(u, w) for u in out]

    return GeneratorGraph(
        "oscillating_growth", {"backward": backward, "epsilon": epsilon}, root, row,
        lambda v: backward, epsilon, degree_bound=2,
    )


# ---------------------------------------------------------------------------
# random environment on Z


def _site_key(z: int) -> int:
    return 2 * z if z >= 0 else -2 * z - 1


class SiteEnvironment:
    """I.i.d. environment ``(omega_z^+, nu_z)`` drawn lazily per site from
    finitely-supported marginals; site ``z`` uses a Philox stream keyed by
    ``(seed, z)``."""

    def __init__(self, omega_support, omega_weights, nu_support, nu_weights, seed: int = 0):
        self.omega_support = np.asarray(_as_list(omega_support))
        self.omega_weights = np.asarray(_as_list(omega_weights), dtype=float)
        self.nu_support = np.asarray(_as_list(nu_support))
        self.nu_weights = np.asarray(_as_list(nu_weights), dtype=float)
        for s, w, nm in (
            (self.omega_support, self.omega_weights, "omega"),
            (self.nu_support, self.nu_weights, "nu"),
        ):
            if len(s) != len(w) or len(s) == 0:
                raise SpecError(f"{nm} support and weights differ in length")
            if np.any(w <= 0):
                raise SpecError(f"{nm} weights must be positive")
            if np.any((s <= 0) | (s >= 1)):
                raise SpecError(f"{nm} support must lie in (0, 1)")
        self.omega_weights = self.omega_weights / self.omega_weights.sum()
        self.nu_weights = self.nu_weights / self.nu_weights.sum()
        self.seed = int(seed)
        self._cache: dict[int, tuple[float, float]] = {}

    def __call__(self, z: int) -> tuple[float, float]:
        hit = self._cache.get(z)
        if hit is None:
            rng = np.random.Generator(np.random.Philox(key=[self.seed, _site_key(z)]))
            u = rng.random(2)
            a = int(np.searchsorted(np.cumsum(self.omega_weights), u[0], side="right"))
            b = int(np.searchsorted(np.cumsum(self.nu_weights), u[1], side="right"))
            a = min(a, len(self.omega_support) - 1)
            b = min(b, len(self.nu_support) - 1)
            hit = (float(self.omega_support[a]), float(self.nu_support[b]))
            self._cache[z] = hit
        return hit


def rwdcre(
    omega_support="0.5",
    omega_weights="1",
    nu_support="0.4",
    nu_weights="1",
    seed: int = 0,
    epsilon: float = 1e-3,
) -> GeneratorGraph:
    """Directed cover of Z in a random environment: ``pG(z, z+1) = omega_z^+``
    and ``p(-z) = nu_z``."""
    env = SiteEnvironment(omega_support, omega_weights, nu_support, nu_weights, seed)
    if np.any((env.nu_support <= epsilon) | (env.nu_support >= 1 - epsilon)):
        raise SpecError("nu support must lie in (epsilon, 1 - epsilon)")

    def row(z):
        w, _ = env(z)
        return [(z + 1, w), (z - 1, 1.0 - w)]

    params = {
        "omega_support": list(env.omega_support), "omega_weights": list(env.omega_weights),
        "nu_support": list(env.nu_support), "nu_weights": list(env.nu_weights),
        "seed": int(seed), "epsilon": epsilon,
    }
    g = GeneratorGraph(
        "rwdcre", params, 0, row, lambda z: env(z)[1], epsilon,
        degree_bound=2, predecessors_fn=lambda z: [z - 1, z + 1],
    )
    g.environment = env
    return g


# ---------------------------------------------------------------------------


def _coerce(params: Mapping, name: str, kind=float):
    return kind(params[name])


def make_generator(name: str, params: Mapping | None = None) -> BaseGraph:
    """Instantiate a built-in base graph by name."""
    params = dict(params or {})
    try:
        if name == "homogeneous_tree":
            return homogeneous_tree(int(params.get("d", 2)), float(params.get("beta", 0.25)))
        if name == "homesick":
            return homesick(float(params.get("lam", params.get("lambda", 2.0))), int(params.get("d", 2)))
        if name == "halfline_critical":
            return halfline_critical(float(params.get("epsilon", 0.1)))
        if name == "two_sided_line":
            kw = {k: float(params[k]) for k in ("p", "q", "c1", "c2", "epsilon") if k in params}
            return two_sided_line(**kw)
        if name == "oscillating_growth":
            return oscillating_growth(float(params.get("backward", 1.0 / 3.0)))
        if name == "rwdcre":
            kw = {k: params[k] for k in ("omega_support", "omega_weights", "nu_support", "nu_weights") if k in params}
            return rwdcre(seed=int(params.get("seed", 0)), epsilon=float(params.get("epsilon", 1e-3)), **kw)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"bad parameters for generator {name!r}: {exc}") from exc
    raise SpecError(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")


def entropy_example_spec() -> dict:
    """The three-vertex example with asymptotic entropy about 0.060499."""
    return {
        "epsilon": 1e-6,
        "kernel": "tree",
        "root": "i0",
        "vertices": ["i0", "i1", "i2"],
        "edges": [
            {"from": "i0", "to": "i1", "p": 1 / 3},
            {"from": "i0", "to": "i2", "p": 1 / 3},
            {"from": "i1", "to": "i0", "p": 1 / 2},
            {"from": "i2", "to": "i1", "p": 3 / 4},
        ],
        "backward": {"i0": 1 / 3, "i1": 1 / 2, "i2": 1 / 4},
    }


def constant_backward_graph(g: FiniteGraph, beta: float) -> FiniteGraph:
    """Same forward kernel as ``g`` with ``p(-i) = beta`` everywhere."""
    edges = {i: list(g.out_edges(i)) for i in g.vertices}
    back = {i: beta for i in g.vertices}
    eps = min(g.epsilon, 0.5 * min(beta, 1 - beta))
    return FiniteGraph(g.root, g.vertices, edges, back, epsilon=eps, name=f"{g.name}_beta")
