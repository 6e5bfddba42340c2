"""Spectral quantities of the mean matrix ``M`` and adjacency ``A``.

Truncated Perron-Frobenius values (lower bounds for the infinite operator),
Collatz-Wielandt certificates, exact level counts of the cover, top Lyapunov
exponents for the random-environment classification and the ergodicity
verdict.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .errors import (
    BudgetExceeded,
    NonConvergence,
    NonPositiveTestFunction,
    SingularCollapse,
    UnboundedGeometry,
    ZeroMatrix,
)
from .graph import BaseGraph, VertexId

MC_BAND = 3.0


def _require_bounded(g: BaseGraph):
    if not g.finite and getattr(g, "degree_bound", None) is None:
        raise UnboundedGeometry(f"{g.name} does not declare a degree bound")


def ball_matrix(g: BaseGraph, radius: int, matrix: str = "M"):
    """Induced matrix on the ball of ``radius`` around the root.

    The ball is taken in the symmetrised sense (out-edges plus known
    in-edges). Returns ``(vertices, csr_matrix)``.
    """
    _require_bounded(g)
    verts = g.ball(radius)
    index = {v: k for k, v in enumerate(verts)}
    rows, cols, vals = [], [], []
    for a, i in enumerate(verts):
        for j, x in g.row(i, matrix):
            b = index.get(j)
            if b is not None and x > 0:
                rows.append(a)
                cols.append(b)
                vals.append(x)
    n = len(verts)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return verts, mat


@dataclass
class PFEstimate:
    value: float
    lower: float
    upper: float
    iterations: int
    converged_on: str  # "bracket" or "estimate"


def perron_value(mat, tol: float = 1e-10, max_iter: int = 1_000_000, seed: int = 0) -> PFEstimate:
    """Largest eigenvalue of a non-negative matrix by shifted power iteration.

    Iterates ``B = mat + s I`` from the all-ones vector; the shift makes the
    iteration aperiodic for bipartite matrices and keeps iterates strictly
    positive, so ``min (Bx)_i / x_i`` and ``max (Bx)_i / x_i`` bracket the
    Perron value at every step.
    """
    mat = sparse.csr_matrix(mat)
    n = mat.shape[0]
    if n == 0 or mat.nnz == 0 or not np.any(mat.data > 0):
        raise ZeroMatrix("matrix has no positive entry")
    s = 1.0
    B = mat + s * sparse.identity(n, format="csr")
    x = np.ones(n)
    prev = None
    est = lo = hi = 0.0
    stagnant = 0
    rng = None
    history: list[float] = []
    for it in range(1, max_iter + 1):
        y = B @ x
        ratios = y / x
        lo, hi = float(ratios.min()), float(ratios.max())
        est = float(y.sum() / x.sum())
        history.append(est)
        scale = max(1.0, abs(est - s))
        if hi - lo <= tol * scale:
            return PFEstimate(est - s, lo - s, hi - s, it, "bracket")
        # reducible matrices never close the bracket; settle on a stable estimate
        if prev is not None and len(history) > 2:
            if abs(est - prev) <= tol * scale * 1e-2 and abs(history[-3] - est) <= tol * scale * 1e-2:
                return PFEstimate(est - s, lo - s, hi - s, it, "estimate")
            if abs(est - prev) == 0.0:
                stagnant += 1
        if stagnant > 50:
            rng = rng or np.random.default_rng(seed)
            y = y * (1.0 + 0.01 * rng.random(n))
            stagnant = 0
        prev = est
        x = y / y.max()
    raise NonConvergence(max_iter, (history[-2] - s, history[-1] - s) if len(history) > 1 else None)


def truncated_pf(
    g: BaseGraph, matrix: str = "M", radius: int = 50, tol: float = 1e-10, max_iter: int = 1_000_000
) -> float:
    """Perron-Frobenius value of the matrix induced on the ball of ``radius``.

    For an infinite base graph this is only a lower bound of the operator's
    spectral quantities; for a finite strongly connected graph and a radius
    at least its diameter it is the Perron-Frobenius eigenvalue.
    """
    return truncated_pf_details(g, matrix, radius, tol, max_iter)[0].value


def truncated_pf_details(g, matrix="M", radius=50, tol=1e-10, max_iter=1_000_000):
    verts, mat = ball_matrix(g, radius, matrix)
    return perron_value(mat, tol, max_iter), verts


# ---------------------------------------------------------------------------


@dataclass
class CWResult:
    success: bool
    lam: float
    radius: int
    matrix: str
    n_checked: int
    margin: float
    vertex: object = None  # worst vertex (violating one on failure)
    deficit: float = 0.0
    complement_unchecked: bool = True

    def to_dict(self):
        d = asdict(self)
        d["vertex"] = None if self.vertex is None else str(self.vertex)
        return d


def cw_certify(
    g: BaseGraph,
    f: Callable[[VertexId], float],
    lam: float,
    radius: int,
    matrix: str = "M",
    sup_bound: float | None = None,
    slack: float = 1e-12,
) -> CWResult:
    """Check ``(Mf)(i) >= lam * f(i)`` on the ball of ``radius``.

    Success means ``lam`` is a lower bound for the upper Collatz-Wielandt
    number as far as the checked ball goes; the complement of the ball is
    not examined and is flagged as such. Failure reports the vertex with the
    largest deficit.
    """
    _require_bounded(g)
    verts = g.ball(radius)
    complement = not (g.finite and len(verts) == len(g.vertices))
    margin = math.inf
    worst = None
    for i in verts:
        fi = float(f(i))
        if not fi > 0:
            raise NonPositiveTestFunction(i, fi)
        if sup_bound is not None and fi > sup_bound:
            raise NonPositiveTestFunction(i, f"{fi} exceeds declared bound {sup_bound}")
        mf = 0.0
        for j, x in g.row(i, matrix):
            mf += x * float(f(j))
        d = mf - lam * fi
        if d < margin:
            margin = d
            worst = i
    ok = margin >= -slack
    return CWResult(
        success=ok, lam=lam, radius=radius, matrix=matrix, n_checked=len(verts),
        margin=margin, vertex=worst, deficit=0.0 if ok else -margin,
        complement_unchecked=complement,
    )


def halfline_test_function(i: int) -> float:
    """``g(0) = 1`` and ``g(i) = i / (i + 1)``: satisfies ``Mg >= g`` on the
    critical half-line."""
    return 1.0 if i == 0 else i / (i + 1.0)


# ---------------------------------------------------------------------------


@dataclass
class LevelCounts:
    counts: list[int]
    complete: bool = True

    @property
    def roots(self) -> list[float]:
        out = [float("nan")]
        for n, c in enumerate(self.counts[1:], start=1):
            out.append(math.exp(math.log(c) / n) if c > 0 else 0.0)
        return out

    def to_tsv(self) -> str:
        lines = ["n\tcount\troot"]
        for n, (c, r) in enumerate(zip(self.counts, self.roots)):
            lines.append(f"{n}\t{c}\t{'' if n == 0 else format(r, '.17g')}")
        return "\n".join(lines) + "\n"


def count_levels(g: BaseGraph, N: int, budget: int = 1_000_000) -> LevelCounts:
    """Exact sizes ``|T_0|, ..., |T_N|`` of the cover's levels.

    Dynamic programming on the label measure (label -> number of tree
    vertices at the current height carrying it). Raises
    :class:`BudgetExceeded` with the partial counts once the measure's
    support exceeds ``budget`` labels.
    """
    measure = {g.root: 1}
    counts = [1]
    for n in range(1, N + 1):
        nxt: dict = {}
        for i, c in measure.items():
            for j, _ in g.out_edges(i):
                nxt[j] = nxt.get(j, 0) + c
        if len(nxt) > budget:
            raise BudgetExceeded(n, LevelCounts(counts, complete=False))
        measure = nxt
        counts.append(sum(measure.values()))
    return LevelCounts(counts)


# ---------------------------------------------------------------------------
# Lyapunov exponents


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed), int(trial)]))


def lyapunov_top(
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    trials: int,
    seed: int = 0,
    chunk: int = 4096,
) -> tuple[float, float]:
    """Top Lyapunov exponent of i.i.d. 2x2 products, ``(mean, stderr)``.

    ``sampler(rng, size)`` returns an array of shape ``(size, 2, 2)``. Trial
    ``t`` draws from its own Philox stream keyed by ``(seed, t)``. Running
    products are renormalised by their operator infinity-norm at every step
    and the logs of the norms accumulated.
    """
    if n < 1 or trials < 1:
        raise ValueError("n and trials must be >= 1")
    rngs = [_trial_rng(seed, t) for t in range(trials)]
    P = np.broadcast_to(np.eye(2), (trials, 2, 2)).copy()
    logs = np.zeros(trials)
    done = 0
    while done < n:
        c = min(chunk, n - done)
        mats = np.stack([np.asarray(sampler(r, c), dtype=float).reshape(c, 2, 2) for r in rngs])
        if not np.all(np.isfinite(mats)):
            raise ValueError("sampler produced non-finite entries")
        for k in range(c):
            P = mats[:, k] @ P
            norms = np.abs(P).sum(axis=2).max(axis=1)
            if np.any(norms == 0.0):
                raise SingularCollapse(f"product collapsed to zero at step {done + k + 1}")
            logs += np.log(norms)
            P /= norms[:, None, None]
        done += c
    per_trial = logs / n
    mean = float(per_trial.mean())
    err = float(per_trial.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return mean, err


def constant_sampler(A) -> Callable:
    A = np.asarray(A, dtype=float)

    def draw(rng, size):
        return np.broadcast_to(A, (size, 2, 2))

    return draw


def discrete_sampler(mats: Sequence, weights: Sequence[float] | None = None) -> Callable:
    mats = np.asarray(mats, dtype=float)
    w = np.ones(len(mats)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()

    def draw(rng, size):
        return mats[rng.choice(len(mats), size=size, p=w)]

    return draw


# ---------------------------------------------------------------------------
# random environment classification


@dataclass
class RWDCREVerdict:
    verdict: str  # transient | recurrent | inconclusive
    case: int  # 0: lambda = 1 admissible, 1: none, 2: lambda > 1, 3: lambda < 1
    lambda_interval: tuple[float, float] | None
    gamma: float | None = None
    stderr: float | None = None
    threshold: float | None = None
    monte_carlo: bool = False
    band: float = MC_BAND
    notes: list[str] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _mu(omega_plus: float, nu: float) -> tuple[float, float]:
    # mean offspring to the left / right: entries of M at a site
    c = (1.0 - nu) / nu
    return c * (1.0 - omega_plus), c * omega_plus


def admissible_lambda(points) -> tuple[float, float] | None:
    """Interval of ``lam > 0`` with ``mu^- / lam + mu^+ lam <= 1`` at every
    support point, or ``None``."""
    lo, hi = 0.0, math.inf
    for w, v in points:
        mm, mp = _mu(w, v)
        disc = 1.0 - 4.0 * mm * mp
        if disc < 0:
            return None
        r = math.sqrt(disc)
        r1 = (1.0 - r) / (2.0 * mp)
        r2 = (1.0 + r) / (2.0 * mp)
        lo, hi = max(lo, r1), min(hi, r2)
        if lo > hi:
            return None
    return lo, hi


def transfer_matrix(omega_plus: float, nu: float, mirrored: bool = False) -> np.ndarray:
    """Transfer matrix of ``mu^+ f(k+1) + mu^- f(k-1) = f(k)`` (or its
    mirror image when ``mirrored``)."""
    mm, mp = _mu(omega_plus, nu)
    if mirrored:
        mm, mp = mp, mm
    return np.array([[1.0 / mp, -mm / mp], [1.0, 0.0]])


def classify_rwdcre(
    omega: tuple[Sequence[float], Sequence[float]],
    nu: tuple[Sequence[float], Sequence[float]],
    n: int = 2000,
    trials: int = 200,
    seed: int = 0,
    band: float = MC_BAND,
) -> RWDCREVerdict:
    """Recurrence/transience of the walk on the cover of Z in an i.i.d.
    environment with finitely-supported marginals.

    ``omega = (support of omega^+, weights)``, ``nu = (support of nu, weights)``.
    """
    ws, ww = np.asarray(omega[0], float), np.asarray(omega[1], float)
    vs, vw = np.asarray(nu[0], float), np.asarray(nu[1], float)
    ww, vw = ww / ww.sum(), vw / vw.sum()
    if np.any((ws <= 0) | (ws >= 1)) or np.any((vs <= 0) | (vs >= 1)):
        raise ValueError("supports must lie in (0, 1)")
    points = list(product(ws, vs))
    interval = admissible_lambda(points)
    if interval is None:
        return RWDCREVerdict("transient", 1, None, notes=["no admissible lambda on the support"])
    lo, hi = interval
    if lo <= 1.0 <= hi:
        return RWDCREVerdict(
            "recurrent", 0, interval,
            notes=["lambda = 1 admissible: every row sum of M is <= 1"],
        )
    mirrored = hi < 1.0
    case = 3 if mirrored else 2
    # E ln(mu^- / mu^+) in case 2, E ln(mu^+ / mu^-) in case 3
    sgn = -1.0 if mirrored else 1.0
    threshold = sgn * float(np.sum(ww * np.log((1.0 - ws) / ws)))
    if len(ws) == 1 and len(vs) == 1:
        A = transfer_matrix(ws[0], vs[0], mirrored)
        gamma = float(np.log(np.max(np.abs(np.linalg.eigvals(A)))))
        verdict = "transient" if gamma < threshold else "recurrent"
        return RWDCREVerdict(verdict, case, interval, gamma, 0.0, threshold, False, band,
                             ["degenerate environment: exponent from the constant matrix"])

    wcum, vcum = np.cumsum(ww), np.cumsum(vw)

    def sampler(rng, size):
        u = rng.random((size, 2))
        a = np.minimum(np.searchsorted(wcum, u[:, 0], side="right"), len(ws) - 1)
        b = np.minimum(np.searchsorted(vcum, u[:, 1], side="right"), len(vs) - 1)
        w, v = ws[a], vs[b]
        c = (1.0 - v) / v
        mp, mm = c * w, c * (1.0 - w)
        if mirrored:
            mm, mp = mp, mm
        out = np.zeros((size, 2, 2))
        out[:, 0, 0] = 1.0 / mp
        out[:, 0, 1] = -mm / mp
        out[:, 1, 0] = 1.0
        return out

    gamma, err = lyapunov_top(sampler, n, trials, seed)
    gap = threshold - gamma
    if gap > band * err:
        verdict = "transient"
    elif gap < -band * err:
        verdict = "recurrent"
    else:
        verdict = "inconclusive"
    return RWDCREVerdict(verdict, case, interval, gamma, err, threshold, True, band,
                         [f"decision band {band} standard errors"])


# ---------------------------------------------------------------------------
# ergodicity


def r_inf_proxy(g: BaseGraph, radius: int, n_powers: int, matrix: str = "M") -> list[float]:
    """``||M_F^n 1||_inf^(1/n)`` for ``n = 1..n_powers`` on the ball ``F``."""
    _, mat = ball_matrix(g, radius, matrix)
    x = np.ones(mat.shape[0])
    out = []
    log_scale = 0.0
    for n in range(1, n_powers + 1):
        x = mat @ x
        m = float(x.max()) if x.size else 0.0
        if m <= 0:
            out.extend([0.0] * (n_powers - n + 1))
            break
        log_scale += math.log(m)
        x = x / m
        out.append(math.exp(log_scale / n))
    return out


@dataclass
class ErgodicityVerdict:
    verdict: str  # ergodic | non_ergodic | inconclusive
    lambda_lower: float
    r_inf_proxy: list[float]
    radius: int
    whole_graph: bool
    reason: str

    def to_dict(self):
        return asdict(self)


def ergodicity_verdict(
    g: BaseGraph, radius: int = 50, n_powers: int = 50, margin: float = 1e-6, tol: float = 1e-10
) -> ErgodicityVerdict:
    """Three-way ergodicity verdict.

    Non-ergodic when the truncated Perron value already exceeds 1; ergodic
    only for finite graphs whose ``r_inf`` proxy is below ``1 - margin`` and
    non-increasing over the last five powers; inconclusive otherwise.
    """
    est, verts = truncated_pf_details(g, "M", radius, tol)
    lam_low = est.value
    proxy = r_inf_proxy(g, radius, n_powers)
    whole = bool(g.finite and len(verts) == len(g.vertices))
    if lam_low > 1 + 1e-9:
        return ErgodicityVerdict("non_ergodic", lam_low, proxy, radius, whole,
                                 "truncated Perron value exceeds 1")
    tail = proxy[-5:]
    steady = all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))
    if whole and proxy and proxy[-1] < 1 - margin and steady:
        return ErgodicityVerdict("ergodic", lam_low, proxy, radius, whole,
                                 "finite graph with r_inf proxy below 1")
    reason = "infinite graph: truncation cannot bound r_inf" if not whole else "proxy not below 1"
    return ErgodicityVerdict("inconclusive", lam_low, proxy, radius, whole, reason)


# ---------------------------------------------------------------------------


@dataclass
class SpectralReport:
    rho_lower: float
    radius: int
    matrix: str
    n_ball: int
    pf_bracket: tuple[float, float]
    cw_certified: dict | None = None
    r_inf_estimate: list[float] = field(default_factory=list)
    ergodicity: dict | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def spectral_report(
    g: BaseGraph,
    radius: int = 50,
    matrix: str = "M",
    tol: float = 1e-10,
    n_powers: int = 50,
    test_function: Callable | None = None,
    lam: float | None = None,
) -> SpectralReport:
    est, verts = truncated_pf_details(g, matrix, radius, tol)
    whole = bool(g.finite and len(verts) == len(g.vertices))
    notes = []
    if not whole:
        notes.append("rho_lower is a truncation value: a lower bound for the infinite operator")
    rep = SpectralReport(
        rho_lower=est.value, radius=radius, matrix=matrix, n_ball=len(verts),
        pf_bracket=(est.lower, est.upper),
        r_inf_estimate=r_inf_proxy(g, radius, n_powers, matrix),
        notes=notes,
    )
    if test_function is not None and lam is not None:
        rep.cw_certified = cw_certify(g, test_function, lam, radius, matrix).to_dict()
    if matrix == "M":
        rep.ergodicity = ergodicity_verdict(g, radius, n_powers, tol=tol).to_dict()
    return rep
