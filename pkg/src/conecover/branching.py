"""Continuous-time multi-type branching process coupled to the cover walk.

Every particle of type ``i`` carries total rate 1: it dies at rate ``p(-i)``
and gives birth to a particle of type ``j`` at rate ``p(i, j)``. Starting
from one particle of the root type, the extinction probability equals the
probability that the walk ever traverses the loop at the root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .graph import BaseGraph, vertex_to_str
from .walk import compile_graph, map_runs, simulate

DEFAULT_CAP = 100_000
_BLOCK = 1 << 15
_STREAM = 1 << 62  # keeps branching streams apart from walk run indices

EXTINCT, EXCEEDED_CAP, TIMED_OUT = "extinct", "exceeded_cap", "timed_out"


@numba.njit(nogil=True, cache=True)
def _gw_kernel(u, upos, counts, total, t, events, cap, t_max, log_types, log_delta, back, expanded, rstart, rlen,
               tgt, prob):
    """Advance the population; returns (total, t, events, upos, status, type).

    status 0 extinct, 1 above cap, 2 past t_max, 3 uniforms exhausted,
    4 row of ``type`` missing.
    """
    n_types = counts.shape[0]
    nu = u.shape[0]
    while True:
        if total == 0:
            return total, t, events, upos, 0, -1
        if total > cap:
            return total, t, events, upos, 1, -1
        if upos + 3 > nu:
            return total, t, events, upos, 3, -1
        wait = -math.log(1.0 - u[upos]) / total
        if t + wait > t_max:
            return total, t, events, upos, 2, -1
        # pick a particle uniformly: types weighted by their counts
        target = u[upos + 1] * total
        acc = 0.0
        i = n_types - 1
        for k in range(n_types):
            acc += counts[k]
            if target < acc:
                i = k
                break
        if not expanded[i]:
            return total, t, events, upos, 4, i
        x = u[upos + 2]
        upos += 3
        t += wait
        b = back[i]
        if x < b:
            counts[i] -= 1
            total -= 1
            delta = -1
        else:
            x -= b
            s = rstart[i]
            n = rlen[i]
            j = tgt[s + n - 1]
            acc = 0.0
            for e in range(n):
                acc += prob[s + e]
                if x < acc:
                    j = tgt[s + e]
                    break
            counts[j] += 1
            total += 1
            delta = 1
            i = j
        if events < log_types.shape[0]:
            log_types[events] = i
            log_delta[events] = delta
        events += 1


@dataclass
class GWOutcome:
    kind: str  # extinct | exceeded_cap | timed_out
    time: float
    events: int
    total: int
    population: dict = field(default_factory=dict)  # type -> count, for timed_out and exceeded_cap
    first_events: list = field(default_factory=list)  # (type, +1 birth | -1 death)

    @property
    def extinct(self) -> bool:
        return self.kind == EXTINCT

    def to_dict(self) -> dict:
        return {
            "outcome": self.kind,
            "time": self.time,
            "events": self.events,
            "total": self.total,
            "population": {vertex_to_str(k): v for k, v in self.population.items()},
        }


def gw_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), _STREAM + int(trial)]))


def simulate_gw(
    g: BaseGraph,
    cap: int = DEFAULT_CAP,
    t_max: float = math.inf,
    seed: int = 0,
    trial: int = 0,
    record: int = 0,
) -> GWOutcome:
    """One Gillespie trajectory from a single particle of the root type.

    Stops at extinction, when the population exceeds ``cap`` (survival
    proxy) or when the clock passes ``t_max``. ``record`` keeps that many
    leading events as ``(type, +-1)`` pairs, where the type of a birth is
    the newborn's.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    cg = compile_graph(g)
    rng = gw_rng(seed, trial)
    snap = cg.snapshot()
    counts = np.zeros(len(snap[0]), dtype=np.int64)
    counts[cg.index[g.root]] = 1
    total, t, events = 1, 0.0, 0
    log_types = np.zeros(record, dtype=np.int64)
    log_delta = np.zeros(record, dtype=np.int64)
    u = rng.random(_BLOCK)
    upos = 0
    while True:
        total, t, events, upos, status, k = _gw_kernel(
            u, upos, counts, total, t, events, cap, t_max, log_types, log_delta, *snap
        )
        if status == 3:
            u = np.concatenate([u[upos:], rng.random(_BLOCK)])
            upos = 0
            continue
        if status == 4:
            snap = cg.expand(int(k))
            if len(snap[0]) > len(counts):
                counts = np.concatenate([counts, np.zeros(len(snap[0]) - len(counts), dtype=np.int64)])
            continue
        break
    kind = (EXTINCT, EXCEEDED_CAP, TIMED_OUT)[status]
    pop = {}
    if kind != EXTINCT:
        pop = {cg.label(int(k)): int(counts[k]) for k in np.flatnonzero(counts)}
    n_log = min(record, events)
    first = [(cg.label(int(log_types[e])), int(log_delta[e])) for e in range(n_log)]
    return GWOutcome(kind, float(t), int(events), int(total), pop, first)


def extinction_frequency(g: BaseGraph, trials: int, cap: int = DEFAULT_CAP, t_max: float = math.inf,
                         seed: int = 0, workers: int | None = None) -> dict:
    """Outcome tallies over independent trials and the extinction frequency
    with its binomial standard error."""
    kinds = map_runs(lambda r: simulate_gw(g, cap, t_max, seed, r).kind, trials, workers)
    tally = {k: kinds.count(k) for k in (EXTINCT, EXCEEDED_CAP, TIMED_OUT)}
    q = tally[EXTINCT] / trials
    se = math.sqrt(q * (1 - q) / (trials - 1)) if trials > 1 else float("nan")
    return {"trials": trials, "cap": cap, "t_max": t_max, "seed": seed, "tally": tally, "q": q, "stderr": se}


def couple_check(
    g: BaseGraph,
    trials: int = 10_000,
    cap: int = 1000,
    horizon: int = 10_000,
    seed: int = 0,
    workers: int | None = None,
    t_max: float = math.inf,
    sigmas: float = 3.0,
) -> dict:
    """Compare the branching extinction frequency with the walk's loop-visit
    frequency.

    Both estimators are biased low by truncation: a branching trial stopped
    at the cap or clock may still die out, and a walk that has not used the
    loop by ``horizon`` may still do so. The allowance added to the
    ``sigmas``-stderr band is the fraction of timed-out branching trials plus
    the fraction of walk runs that never used the loop and end below height
    ``escape_height = max(20, log2(cap))``, where a later return is not
    negligible.
    """
    if trials < 100:
        raise ValueError("trials must be >= 100")
    gw = extinction_frequency(g, trials, cap, t_max, seed, workers)
    cg = compile_graph(g)
    escape_height = max(20, int(math.log2(cap)))

    def walk_one(r):
        run = simulate(g, horizon, seed, run_index=r, compiled=cg)
        looped = bool(run.loop_flags.any())
        return looped, (not looped) and run.final_height < escape_height

    wres = map_runs(walk_one, trials, workers)
    looped = np.array([w[0] for w in wres], dtype=float)
    stuck = float(np.mean([w[1] for w in wres]))
    q_walk = float(looped.mean())
    se_walk = float(looped.std(ddof=1) / math.sqrt(trials))
    combined = math.hypot(gw["stderr"], se_walk)
    allowance = gw["tally"][TIMED_OUT] / trials + stuck
    diff = abs(gw["q"] - q_walk)
    return {
        "trials": trials,
        "cap": cap,
        "horizon": horizon,
        "seed": seed,
        "q_gw": gw["q"],
        "q_gw_stderr": gw["stderr"],
        "q_walk": q_walk,
        "q_walk_stderr": se_walk,
        "gw_tally": gw["tally"],
        "combined_stderr": combined,
        "bias_allowance": allowance,
        "difference": diff,
        "compatible": bool(diff <= sigmas * combined + allowance),
    }
