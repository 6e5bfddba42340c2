"""Lazy simulation of the nearest-neighbour walk on the directed cover.

The tree is never materialised: a position is the stack of labels on the
geodesic from the root. Base-graph rows are compiled on demand into flat
arrays that a numba kernel consumes; randomness comes from a Philox stream
keyed by ``(seed, run_index)``, one uniform per step, so a run is bitwise
reproducible regardless of how the compiled graph grew or how many workers
share it.
"""

from __future__ import annotations

import math
import os
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .errors import NotTransientEnough
from .graph import BaseGraph, VertexId, vertex_to_str

UNIFORM_BLOCK = 1 << 16
EXPAND_BUDGET = 4096


# ---------------------------------------------------------------------------
# compiled graph


class CompiledGraph:
    """Append-only integer view of a base graph, grown lazily and thread-safe.

    Entries never change once written, so a stale snapshot stays valid for
    every vertex it already covers.
    """

    def __init__(self, g: BaseGraph):
        self.graph = g
        self.labels: list[VertexId] = []
        self.index: dict = {}
        self._lock = threading.Lock()
        self._back = np.zeros(64)
        self._expanded = np.zeros(64, dtype=np.bool_)
        self._rstart = np.zeros(64, dtype=np.int64)
        self._rlen = np.zeros(64, dtype=np.int64)
        self._tgt = np.zeros(256, dtype=np.int64)
        self._prob = np.zeros(256)
        self._n_edges = 0
        self._snapshot = None
        with self._lock:
            self._intern(g.root)
            if g.finite:
                for v in g.vertices:
                    self._intern(v)
                for k in range(len(self.labels)):
                    self._expand_one(k)
            else:
                self._expand_ball(0)
            self._refresh()

    def _intern(self, v) -> int:
        k = self.index.get(v)
        if k is None:
            k = len(self.labels)
            self.labels.append(v)
            self.index[v] = k
            if k >= len(self._back):
                cap = 2 * len(self._back)
                self._back = np.resize(self._back, cap)
                self._expanded = np.concatenate([self._expanded, np.zeros(cap - len(self._expanded), np.bool_)])
                self._rstart = np.resize(self._rstart, cap)
                self._rlen = np.resize(self._rlen, cap)
            self._expanded[k] = False
        return k

    def _expand_one(self, k: int):
        if self._expanded[k]:
            return
        v = self.labels[k]
        row = self.graph.forward(v)
        b = self.graph.backward(v)
        start = self._n_edges
        need = start + len(row)
        if need > len(self._tgt):
            cap = max(2 * len(self._tgt), need)
            self._tgt = np.resize(self._tgt, cap)
            self._prob = np.resize(self._prob, cap)
        for e, (j, p) in enumerate(row):
            self._tgt[start + e] = self._intern(j)
            self._prob[start + e] = p
        self._n_edges = need
        self._back[k] = b
        self._rstart[k] = start
        self._rlen[k] = len(row)
        self._expanded[k] = True

    def _expand_ball(self, k: int, budget: int = EXPAND_BUDGET):
        queue = deque([k])
        done = 0
        while queue and done < budget:
            v = queue.popleft()
            if self._expanded[v]:
                continue
            self._expand_one(v)
            done += 1
            s, n = self._rstart[v], self._rlen[v]
            for t in self._tgt[s : s + n]:
                if not self._expanded[t]:
                    queue.append(int(t))

    def _refresh(self):
        n, m = len(self.labels), self._n_edges
        self._snapshot = (
            self._back[:n].copy(), self._expanded[:n].copy(), self._rstart[:n].copy(),
            self._rlen[:n].copy(), self._tgt[:m].copy(), self._prob[:m].copy(),
        )

    def snapshot(self):
        return self._snapshot

    def expand(self, k: int):
        with self._lock:
            if not self._expanded[k]:
                self._expand_ball(k)
                self._refresh()
            return self._snapshot

    def label(self, k: int) -> VertexId:
        return self.labels[k]


# ---------------------------------------------------------------------------
# kernel


@numba.njit(nogil=True, cache=True)
def _walk_kernel(u, upos, t, n_steps, h, stack, heights, labels, back, expanded, rstart, rlen, tgt, prob):
    """Advance the walk; returns (t, h, upos, status).

    status 0: horizon reached, 1: uniforms exhausted, 2: current row missing.
    """
    nu = u.shape[0]
    while t < n_steps:
        cur = stack[h]
        if cur >= expanded.shape[0] or not expanded[cur]:
            return t, h, upos, 2
        if upos >= nu:
            return t, h, upos, 1
        x = u[upos]
        upos += 1
        b = back[cur]
        if x < b:
            if h > 0:
                h -= 1
            # at the root this is the loop (o, o)
        else:
            x -= b
            s = rstart[cur]
            n = rlen[cur]
            nxt = tgt[s + n - 1]
            acc = 0.0
            for e in range(n):
                acc += prob[s + e]
                if x < acc:
                    nxt = tgt[s + e]
                    break
            h += 1
            stack[h] = nxt
        t += 1
        heights[t] = h
        labels[t] = stack[h]
    return t, h, upos, 0


# ---------------------------------------------------------------------------


def run_rng(seed: int, run_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(run_index)]))


@dataclass
class WeightFunction:
    """Bounded edge weight ``w(i, j)``; ``length(x)`` sums it along the geodesic."""

    fn: Callable[[VertexId, VertexId], float]
    bound: float
    name: str = "w"

    def __call__(self, i, j) -> float:
        x = float(self.fn(i, j))
        if abs(x) > self.bound:
            raise ValueError(f"weight {self.name}({i!r}, {j!r}) = {x} exceeds bound {self.bound}")
        return x


def unit_weight() -> WeightFunction:
    return WeightFunction(lambda i, j: 1.0, 1.0, "unit")


@dataclass
class WalkRun:
    seed: int
    run_index: int
    n_steps: int
    heights: np.ndarray  # int32, length n_steps + 1
    label_idx: np.ndarray  # int32 indices into compiled.labels
    path: np.ndarray  # label indices of the final geodesic, root first
    compiled: CompiledGraph = field(repr=False)
    lengths: dict = field(default_factory=dict)  # weight name -> l(X_n)
    checkpoint: int | None = None
    checkpoint_lengths: dict = field(default_factory=dict)

    @property
    def final_height(self) -> int:
        return int(self.heights[-1])

    @property
    def max_height(self) -> int:
        return int(self.heights.max())

    @property
    def loop_flags(self) -> np.ndarray:
        """Step ``t`` (1-based) traversed the loop at the root."""
        h = self.heights
        return (h[1:] == 0) & (h[:-1] == 0)

    @property
    def returns(self) -> int:
        """Number of times ``t >= 1`` at which the walk sits at the root."""
        return int(np.count_nonzero(self.heights[1:] == 0))

    def top_label(self, t: int) -> VertexId:
        return self.compiled.label(int(self.label_idx[t]))

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "run_index": self.run_index,
            "n_steps": self.n_steps,
            "final_height": self.final_height,
            "max_height": self.max_height,
            "returns_to_root": self.returns,
            "loop_events": int(self.loop_flags.sum()),
            "final_label": vertex_to_str(self.top_label(self.n_steps)),
            "lengths": dict(self.lengths),
        }

    def to_tsv(self) -> str:
        lines = ["step\theight\tlabel\tloop_flag"]
        loops = np.concatenate([[False], self.loop_flags])
        for t in range(self.n_steps + 1):
            lines.append(f"{t}\t{self.heights[t]}\t{vertex_to_str(self.top_label(t))}\t{int(loops[t])}")
        return "\n".join(lines) + "\n"


def _path_length(compiled: CompiledGraph, path: np.ndarray, w: WeightFunction) -> float:
    if len(path) < 2:
        return 0.0
    width = int(path.max()) + 1
    codes = path[:-1].astype(np.int64) * width + path[1:]
    uniq, counts = np.unique(codes, return_counts=True)
    vals = np.array([w(compiled.label(int(c) // width), compiled.label(int(c) % width)) for c in uniq])
    # summed in a fixed order so unit weights reproduce the height exactly
    return float(np.dot(counts.astype(float), vals))


def compile_graph(g: BaseGraph) -> CompiledGraph:
    cache = getattr(g, "_compiled", None)
    if cache is None:
        cache = CompiledGraph(g)
        try:
            g._compiled = cache
        except AttributeError:
            pass
    return cache


def simulate(
    g: BaseGraph,
    n_steps: int,
    seed: int = 0,
    weights: Sequence[WeightFunction] = (),
    run_index: int = 0,
    compiled: CompiledGraph | None = None,
    checkpoint: int | None = None,
) -> WalkRun:
    """One seeded trajectory of length ``n_steps`` started at the root.

    With ``checkpoint`` the geodesic at that time is kept as well, so weighted
    lengths ``l(X_checkpoint)`` are available in ``run.checkpoint_lengths``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    cg = compiled or compile_graph(g)
    rng = run_rng(seed, run_index)
    heights = np.zeros(n_steps + 1, dtype=np.int32)
    labels = np.zeros(n_steps + 1, dtype=np.int32)
    stack = np.zeros(n_steps + 2, dtype=np.int64)
    stack[0] = cg.index[g.root]
    labels[0] = stack[0]
    state = {"snap": cg.snapshot(), "u": rng.random(min(UNIFORM_BLOCK, n_steps)), "upos": 0, "t": 0, "h": 0}

    def advance(target):
        while True:
            t, h, upos, status = _walk_kernel(
                state["u"], state["upos"], state["t"], target, state["h"],
                stack, heights, labels, *state["snap"],
            )
            state.update(t=t, h=h, upos=upos)
            if status == 0:
                return
            if status == 1:
                state["u"] = rng.random(min(UNIFORM_BLOCK, n_steps - t))
                state["upos"] = 0
            else:
                state["snap"] = cg.expand(int(stack[h]))

    mid_path = None
    if checkpoint is not None and 0 <= checkpoint < n_steps:
        advance(checkpoint)
        mid_path = stack[: state["h"] + 1].copy()
    advance(n_steps)
    path = stack[: state["h"] + 1].copy()
    run = WalkRun(seed, run_index, n_steps, heights, labels, path, cg)
    for w in weights:
        run.lengths[w.name] = _path_length(cg, path, w)
        if mid_path is not None:
            run.checkpoint_lengths[w.name] = _path_length(cg, mid_path, w)
    run.checkpoint = checkpoint if mid_path is not None else None
    return run


# ---------------------------------------------------------------------------
# exit times


def default_margin(k: int) -> int:
    return 10 * k + 100


def exit_times(heights: np.ndarray, stability_margin=None) -> np.ndarray:
    """Stabilised exit times ``e_0, e_1, ...`` from a height sequence.

    ``e_k`` is the first time after which the height never drops below
    ``k`` within the horizon; it is emitted only while at least
    ``stability_margin`` (an int, or a function of ``k``; default
    ``10 k + 100``) steps follow it.
    """
    h = np.asarray(heights)
    n = len(h) - 1
    suffix_min = np.minimum.accumulate(h[::-1])[::-1]
    top = int(suffix_min[-1])
    ks = np.arange(top + 1)
    e = np.searchsorted(suffix_min, ks, side="left")
    if stability_margin is None:
        margins = 10 * ks + 100
    elif callable(stability_margin):
        margins = np.array([stability_margin(int(k)) for k in ks])
    else:
        margins = np.full(len(ks), int(stability_margin))
    ok = (n - e) >= margins
    stop = len(ok) if ok.all() else int(np.argmin(ok))
    return e[:stop]


def extract_exits(run: WalkRun, stability_margin=None) -> list[tuple[int, int, VertexId]]:
    """Records ``(k, e_k, tau(W_k))`` for the stabilised levels of a run."""
    e = exit_times(run.heights, stability_margin)
    return [(k, int(ek), run.top_label(ek)) for k, ek in enumerate(e)]


# ---------------------------------------------------------------------------
# parallel runs


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("CONECOVER_THREADS")
    if env:
        return max(1, int(env))
    return 1


def map_runs(fn: Callable[[int], object], n_runs: int, workers: int | None = None) -> list:
    """Apply ``fn`` to run indices ``0..n_runs-1``; results in index order."""
    w = worker_count(workers)
    if w == 1 or n_runs < 2:
        return [fn(r) for r in range(n_runs)]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, range(n_runs)))


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return float("nan"), float("nan")
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return float(x.mean()), se


def _late_escaped(heights: np.ndarray) -> bool:
    n = len(heights) - 1
    half = heights[n // 2 :]
    return bool(half.min() > 0 and heights[-1] >= math.sqrt(n))


def empirical_recurrence(
    g: BaseGraph,
    n_steps: int,
    n_runs: int,
    seed: int = 0,
    workers: int | None = None,
    escape_level: float = 0.25,
) -> dict:
    """Horizon-limited recurrence evidence (not a proof).

    Reports returns to the root per run (also at checkpoints
    ``n/64, n/16, n/4, n``), the fraction of runs ending above
    ``escape_level * n``, the fraction that never came back to the root in
    the second half and end above ``sqrt(n)`` ("late escape"), and the
    fraction of runs that traversed the root loop.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    cg = compile_graph(g)
    checkpoints = sorted({max(1, n_steps // 64), max(1, n_steps // 16), max(1, n_steps // 4), n_steps})

    def one(r):
        run = simulate(g, n_steps, seed, run_index=r, compiled=cg)
        at_root = np.cumsum(run.heights[1:] == 0)
        return (
            [int(at_root[c - 1]) for c in checkpoints],
            run.final_height,
            bool(run.loop_flags.any()),
            _late_escaped(run.heights),
        )

    res = map_runs(one, n_runs, workers)
    ret = np.array([r[0] for r in res], dtype=float)
    finals = np.array([r[1] for r in res])
    loops = np.array([r[2] for r in res], dtype=float)
    late = np.array([r[3] for r in res], dtype=float)
    means = ret.mean(axis=0)
    growth = float("nan")
    if len(checkpoints) >= 2 and means[0] > 0 and means[-1] > 0:
        growth = math.log(means[-1] / means[1 if len(checkpoints) > 2 else 0]) / math.log(
            checkpoints[-1] / checkpoints[1 if len(checkpoints) > 2 else 0]
        )
    q, q_se = _mean_se(loops)
    return {
        "n_steps": n_steps,
        "n_runs": n_runs,
        "seed": seed,
        "checkpoints": checkpoints,
        "mean_returns": [float(x) for x in means],
        "returns_per_run": [int(x) for x in ret[:, -1]],
        "returns_growth_exponent": growth,
        "escape_fraction": float(np.mean(finals > escape_level * n_steps)),
        "escape_level": escape_level,
        "late_escape_fraction": float(late.mean()),
        "loop_visit_probability": q,
        "loop_visit_stderr": q_se,
        "note": "horizon-limited evidence, not a proof",
    }


def empirical_entropy_speed(
    g: BaseGraph,
    runs: int,
    horizon: int,
    seed: int = 0,
    weights: Sequence[WeightFunction] = (),
    q: dict | None = None,
    burn_in: int | None = None,
    guard: float = 0.5,
    stability_margin=None,
    workers: int | None = None,
) -> dict:
    """Monte Carlo rate of escape and asymptotic entropy.

    Speeds are means of ``(l(X_n) - l(X_b)) / (n - b)`` with ``b = burn_in``
    (default ``n // 10``; ``burn_in=0`` gives plain ``l(X_n) / n``), which
    removes the start-up offset of the height process.

    Entropy is ``ell0`` times the mean of ``-log q(tau_{k-1}, tau_k)`` along
    the exit-label chain over a window of levels ``(K0, K1]`` shared by all
    runs: ``K1`` is the smallest top stabilised level among the runs and
    ``K0 = K1 // 10``. ``q`` maps label pairs to exit-chain probabilities;
    without it plug-in frequencies of the observed transitions are used.
    Standard errors come from the delta method over runs.
    """
    if burn_in is None:
        burn_in = horizon // 10
    if not 0 <= burn_in < horizon:
        raise ValueError("burn_in must lie in [0, horizon)")
    cg = compile_graph(g)
    unit = unit_weight()
    unit.name = "__height__"
    weights = list(weights)
    span = float(horizon - burn_in)

    def one(r):
        run = simulate(g, horizon, seed, weights, run_index=r, compiled=cg, checkpoint=burn_in)
        speed = {"__height__": (run.final_height - int(run.heights[burn_in])) / span}
        for w in weights:
            start = run.checkpoint_lengths.get(w.name, 0.0)
            speed[w.name] = (run.lengths[w.name] - start) / span
        e = exit_times(run.heights, stability_margin)
        return speed, _late_escaped(run.heights), run.label_idx[e].astype(np.int64)

    res = map_runs(one, runs, workers)
    escaped = float(np.mean([r[1] for r in res]))
    if escaped <= guard:
        raise NotTransientEnough(escaped, guard)

    a = np.array([r[0]["__height__"] for r in res])
    ell0, ell0_se = _mean_se(a)
    ell_w = {w.name: _mean_se([r[0][w.name] for r in res]) for w in weights}

    k1 = min(len(r[2]) for r in res) - 1
    k0 = k1 // 10
    out = {
        "runs": runs,
        "horizon": horizon,
        "seed": seed,
        "burn_in": burn_in,
        "escaped_fraction": escaped,
        "ell0": ell0,
        "ell0_stderr": ell0_se,
        "ell_w": {k: v[0] for k, v in ell_w.items()},
        "ell_w_stderr": {k: v[1] for k, v in ell_w.items()},
        "level_window": [k0, k1],
        "q_source": "analytic" if q is not None else "plug-in",
    }
    if k1 - k0 < 1:
        out.update(h=float("nan"), h_stderr=float("nan"), exit_chain_entropy=float("nan"),
                   exit_chain_entropy_stderr=float("nan"))
        return out

    width = len(cg.labels) + 1
    codes = [r[2][k0:k1] * width + r[2][k0 + 1 : k1 + 1] for r in res]
    if q is None:
        uniq, cnt = np.unique(np.concatenate(codes), return_counts=True)
        src_tot: dict = {}
        for c, n in zip(uniq, cnt):
            src_tot[c // width] = src_tot.get(c // width, 0) + n
        table = {int(c): -math.log(n / src_tot[c // width]) for c, n in zip(uniq, cnt)}
    else:
        table = {}
    c = np.empty(len(res))
    for r, cd in enumerate(codes):
        uniq, inv = np.unique(cd, return_inverse=True)
        vals = np.empty(len(uniq))
        for m, code in enumerate(uniq):
            v = table.get(int(code))
            if v is None:
                i, j = divmod(int(code), width)
                v = -math.log(q[(cg.label(i), cg.label(j))])
                table[int(code)] = v
            vals[m] = v
        c[r] = float(np.dot(np.bincount(inv.ravel(), minlength=len(uniq)).astype(float), vals))
    c /= k1 - k0
    hq, hq_se = _mean_se(c)
    h = ell0 * hq
    infl = a * hq + ell0 * c
    _, h_se = _mean_se(infl)
    out.update(h=h, h_stderr=h_se, exit_chain_entropy=hq, exit_chain_entropy_stderr=hq_se)
    return out


def exit_label_frequencies(g: BaseGraph, runs: int, horizon: int, seed: int = 0, burn_in: int | None = None,
                           workers: int | None = None) -> dict:
    """Empirical frequencies of exit labels ``tau(W_k)`` after ``burn_in``."""
    if burn_in is None:
        burn_in = horizon // 10
    cg = compile_graph(g)

    def one(r):
        run = simulate(g, horizon, seed, run_index=r, compiled=cg)
        e = exit_times(run.heights)
        e = e[e >= burn_in]
        return np.bincount(run.label_idx[e], minlength=len(cg.labels))

    res = map_runs(one, runs, workers)
    n = max(len(x) for x in res)
    tot = np.zeros(n)
    for x in res:
        tot[: len(x)] += x
    return {cg.label(k): tot[k] for k in range(n) if tot[k] > 0}
