"""Generating functions at z = 1 and the closed-form asymptotics built on them.

``F(-i)`` is the probability that the walk started at a vertex of label ``i``
ever reaches its parent. It is the minimal non-negative solution of

    F(-i) = p(-i) + sum_j p(i, j) F(-j) F(-i).

From ``F`` follow ``Gbar_i = 1 / (1 - sum_j p(i, j) F(-j))``, the exit chain

    q(i, j) = (1 - F(-j)) / (1 - F(-i)) * p(i, j) * Gbar_i,

its stationary law ``nu``, ``Lambda = sum_i nu(i) F'(-i) / F(-i)``, the rate
of escape ``ell_w = sum w(i, j) nu(i) q(i, j) / Lambda`` and the entropy
``h = ell_0 * sum -nu(i) q(i, j) log q(i, j)`` (natural log).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    MaxIterExceeded,
    NonConvergence,
    RecurrentType,
    Reducible,
    SingularSystem,
    TruncationRequired,
)
from .graph import BaseGraph, FiniteGraph, vertex_to_str

DIVERGENCE_CAP = 1e12
DIM_POINT_CAVEAT = (
    "dim_point equals h/ell0 only if h is also the almost-sure limit of "
    "-(1/n) log pi_n(X_n)"
)


@dataclass
class FSolution:
    vertices: list
    F: np.ndarray
    residual: float
    iterations: int
    method: str
    monotone: bool = True
    lower: np.ndarray | None = None  # truncated runs: freeze-at-0 bracket
    upper: np.ndarray | None = None  # truncated runs: freeze-at-1 bracket
    truncation_radius: int | None = None
    history: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return dict(zip(self.vertices, self.F))


def _system(g: BaseGraph, truncation_radius: int | None):
    """Dense ``(vertices, P, b, outside)`` where ``outside[i]`` is the forward
    mass of row ``i`` leaving the truncation ball."""
    if g.finite:
        P, b = g.tree_kernel()
        return list(g.vertices), P, b, np.zeros(len(b))
    if truncation_radius is None:
        raise TruncationRequired(f"{g.name} is infinite; pass truncation_radius")
    verts = g.ball(truncation_radius)
    index = {v: k for k, v in enumerate(verts)}
    n = len(verts)
    P = np.zeros((n, n))
    b = np.array([g.backward(v) for v in verts])
    outside = np.zeros(n)
    for a, v in enumerate(verts):
        for j, p in g.forward(v):
            k = index.get(j)
            if k is None:
                outside[a] += p
            else:
                P[a, k] += p
    return verts, P, b, outside


def _iterate(P, b, ext, tol, max_iter, history=None):
    """Monotone iteration from 0; ``ext`` is the frozen outside mass times F."""
    x = np.zeros(len(b))
    monotone = True
    for it in range(1, max_iter + 1):
        nxt = b + (P @ x + ext) * x
        if np.any(nxt < x - 1e-15):
            monotone = False
        step = float(np.max(np.abs(nxt - x)))
        x = nxt
        if history is not None:
            history.append(x.copy())
        if step < tol:
            return x, it, monotone
    raise MaxIterExceeded(step)


def _newton(P, b, ext, tol, max_iter):
    """Newton's method from 0 for ``x = b + (P x + ext) * x``.

    For this monotone polynomial system the Newton iterates started at 0
    increase to the least fixed point, so the spurious root 1 of a transient
    system is never selected.
    """
    n = len(b)
    x = np.zeros(n)
    eye = np.eye(n)
    for it in range(1, max_iter + 1):
        Px = P @ x + ext
        phi = b + Px * x
        if it > 1 and float(np.max(np.abs(phi - x))) < tol:
            return x, it
        J = np.diag(Px) + x[:, None] * P
        try:
            dx = np.linalg.solve(eye - J, phi - x)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(dx)) or np.any(dx < -1e-12):
            return None
        x = np.minimum(x + dx, 1.0)
        if float(np.max(np.abs(dx))) < tol:
            return x, it
    return None


def _one_is_least(P, b, ext) -> bool:
    """``F = 1`` is the least fixed point iff the Jacobian there has spectral
    radius at most 1; deciding this directly avoids the square-root
    conditioning of the critical case."""
    if ext.any() or not np.allclose(b + P.sum(axis=1), 1.0, atol=1e-12):
        return False
    J = np.diag(P.sum(axis=1)) + P
    return float(np.max(np.abs(np.linalg.eigvals(J)))) <= 1 + 1e-12


def solve_F(
    g: BaseGraph,
    tol: float = 1e-14,
    max_iter: int = 10_000_000,
    truncation_radius: int | None = None,
    method: str = "newton",
    keep_history: bool = False,
) -> FSolution:
    """Minimal solution of the first-passage system at ``z = 1``.

    ``method="iterate"`` runs the plain monotone scheme from ``F = 0``;
    ``"newton"`` (default) accelerates it with Newton steps from 0, falling
    back to plain iteration if a step fails. Infinite graphs need
    ``truncation_radius``: outside the ball ``F`` is frozen at 1 (upper
    bracket) and at 0 (lower bracket); ``F`` is the upper bracket.
    """
    verts, P, b, outside = _system(g, truncation_radius)
    history = [] if keep_history else None

    def solve(ext_value):
        ext = outside * ext_value
        if method == "newton":
            if len(b) <= 2000 and _one_is_least(P, b, ext):
                return np.ones(len(b)), 0, "critical_check", True
            res = _newton(P, b, ext, tol, 200)
            if res is not None:
                return res[0], res[1], "newton", True
        x, it, mono = _iterate(P, b, ext, tol, max_iter, history)
        return x, it, "iterate", mono

    x, it, used, mono = solve(1.0)
    resid = float(np.max(np.abs(b + (P @ x + outside) * x - x)))
    sol = FSolution(verts, x, resid, it, used, mono, history=history or [])
    if truncation_radius is not None and not g.finite:
        lo, _, _, _ = solve(0.0)
        sol.lower, sol.upper = lo, x
        sol.truncation_radius = truncation_radius
    return sol


def q_loop(g: BaseGraph, sol: FSolution) -> float:
    """Probability that the walk ever traverses the loop at the root.

    The loop plays the role of the ancestor edge of the root, so this is
    ``F(-i0)``; it also equals the extinction probability of the coupled
    branching process. Note that ``p(-i0) + sum_j p(i0, j) F(-j)`` only
    covers the first excursion.
    """
    return float(sol.F[sol.vertices.index(g.root)])


def root_return(g: BaseGraph, sol: FSolution) -> float:
    """``U_root = p(-i0) + sum_j p(i0, j) F(-j)``: probability that the first
    excursion from the root ends with the loop. ``U_root < 1`` exactly when
    ``F(-i0) < 1``."""
    Fd = sol.as_dict()
    return g.backward(g.root) + sum(p * Fd.get(j, 1.0) for j, p in g.forward(g.root))


@dataclass
class Classification:
    verdict: str  # transient | recurrent_or_critical
    U_root: float
    q_loop: float
    spectral_lambda: float | None = None
    spectral_note: str = ""


def classify_analytic(g: BaseGraph, sol: FSolution, tol: float = 1e-9) -> Classification:
    """Transient iff ``1 - U_root > tol``; otherwise recurrent or critical,
    with the Perron value of ``M`` attached for finite graphs."""
    U = root_return(g, sol)
    verdict = "transient" if 1.0 - U > tol else "recurrent_or_critical"
    lam = None
    note = ""
    if g.finite:
        from .spectral import truncated_pf

        lam = truncated_pf(g, "M", radius=len(g.vertices))
        if verdict == "recurrent_or_critical":
            note = "lambda(M) < 1: recurrent" if lam < 1 - 1e-9 else "lambda(M) = 1: critical (null recurrent)"
        else:
            note = "lambda(M) > 1: transient"
    return Classification(verdict, U, q_loop(g, sol), lam, note)


@dataclass
class FPrime:
    Fp: np.ndarray | None
    finite: bool
    method: str
    radius_B: float | None = None


def _derivative_system(P, b, F):
    PF = P @ F
    B = P * F[:, None] + np.diag(PF)
    c = b + PF * F
    return B, c


def solve_Fprime(g: BaseGraph, sol: FSolution, tol: float = 1e-12, dense_limit: int = 2000,
                 max_iter: int = 1_000_000) -> FPrime:
    """``F'(-i|1)`` from the linear system ``(I - B) F' = c``.

    A spectral radius of ``B`` at or above 1 means the derivative is
    infinite: returned as ``FPrime(None, finite=False)`` (``Lambda = inf``).
    """
    if sol.truncation_radius is not None:
        raise TruncationRequired("derivatives are only computed for finite graphs")
    P, b = g.tree_kernel()
    B, c = _derivative_system(P, b, sol.F)
    n = len(b)
    if n <= dense_limit:
        rho = float(np.max(np.abs(np.linalg.eigvals(B)))) if n else 0.0
        if rho >= 1 - 1e-12:
            return FPrime(None, False, "dense", rho)
        try:
            Fp = np.linalg.solve(np.eye(n) - B, c)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
        return FPrime(Fp, True, "dense", rho)
    x = np.zeros(n)
    for _ in range(max_iter):
        nxt = c + B @ x
        if float(np.max(nxt)) > DIVERGENCE_CAP:
            return FPrime(None, False, "iterate")
        if float(np.max(np.abs(nxt - x))) < tol:
            return FPrime(nxt, True, "iterate")
        x = nxt
    return FPrime(None, False, "iterate")


def build_exit_chain(g: BaseGraph, sol: FSolution) -> tuple[np.ndarray, np.ndarray]:
    """Exit-chain matrix ``Q`` and ``Gbar`` (indexed like ``sol.vertices``)."""
    P, b = g.tree_kernel()
    F = sol.F
    for v, f in zip(sol.vertices, F):
        if f >= 1 - 1e-12:
            raise RecurrentType(v)
    Gbar = 1.0 / (1.0 - P @ F)
    Q = (1.0 - F)[None, :] / (1.0 - F)[:, None] * P * Gbar[:, None]
    sums = Q.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > 1e-10:
        raise SingularSystem(f"exit chain rows not stochastic: {sums}")
    return Q, Gbar


def stationary(Q: np.ndarray, tol: float = 1e-12, dense_limit: int = 2000, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary probability vector of an irreducible stochastic matrix."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    ncomp, lab = connected_components(Q > 0, directed=True, connection="strong")
    if ncomp > 1:
        closed = []
        for c in range(ncomp):
            members = np.flatnonzero(lab == c)
            out = Q[np.ix_(members, np.flatnonzero(lab != c))].sum()
            if out == 0:
                closed.append(members.tolist())
        raise Reducible(closed)
    if n <= dense_limit:
        A = np.vstack([Q.T - np.eye(n), np.ones((1, n))])
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        nu, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    else:
        nu = np.full(n, 1.0 / n)
        for _ in range(max_iter):
            nxt = 0.5 * (nu + nu @ Q)  # lazy step: aperiodic
            nxt /= nxt.sum()
            if np.max(np.abs(nxt - nu)) < tol * 1e-2:
                nu = nxt
                break
            nu = nxt
        else:
            raise NonConvergence(max_iter)
    nu = np.clip(nu, 0.0, None)
    nu /= nu.sum()
    resid = float(np.max(np.abs(nu @ Q - nu)))
    if resid > max(tol, 1e-10):
        raise NonConvergence(0, resid)
    return nu


def exit_chain_entropy(Q: np.ndarray, nu: np.ndarray) -> float:
    """``sum_i,j -nu(i) q(i, j) log q(i, j)`` in nats."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(Q > 0, -Q * np.log(np.where(Q > 0, Q, 1.0)), 0.0)
    return float(nu @ terms.sum(axis=1))


def min_step_probability(g: FiniteGraph) -> float:
    """Smallest positive one-step probability of the walk on the cover."""
    P, b = g.tree_kernel()
    return float(min(b.min(), P[P > 0].min()))


@dataclass
class GfSolution:
    vertices: list
    F: np.ndarray
    verdict: str
    q_loop: float
    spectral_lambda: float | None = None
    U_root: float | None = None
    Fp: np.ndarray | None = None
    Gbar: np.ndarray | None = None
    Q: np.ndarray | None = None
    nu: np.ndarray | None = None
    Lambda: float | None = None
    ell0: float | None = None
    ell_w: dict = field(default_factory=dict)
    h: float | None = None
    dim_lower: float | None = None
    dim_point: float | None = None
    dim_upper: float | None = None
    exit_entropy: float | None = None
    meta: dict = field(default_factory=dict)

    def q_map(self) -> dict:
        """``{(i, j): q(i, j)}`` over the positive entries."""
        if self.Q is None:
            return {}
        out = {}
        for a, i in enumerate(self.vertices):
            for c, j in enumerate(self.vertices):
                if self.Q[a, c] > 0:
                    out[(i, j)] = float(self.Q[a, c])
        return out

    def to_dict(self) -> dict:
        def vec(x):
            if x is None:
                return None
            return {vertex_to_str(v): float(y) for v, y in zip(self.vertices, x)}

        d = {
            "verdict": self.verdict,
            "vertices": [vertex_to_str(v) for v in self.vertices],
            "F": vec(self.F),
            "Fprime": vec(self.Fp),
            "Gbar": vec(self.Gbar),
            "U_root": self.U_root,
            "q_loop": self.q_loop,
            "spectral_lambda": self.spectral_lambda,
            "Q": None if self.Q is None else [[float(x) for x in row] for row in self.Q],
            "nu": vec(self.nu),
            "Lambda": self.Lambda,
            "ell0": self.ell0,
            "ell_w": dict(self.ell_w),
            "h": self.h,
            "exit_chain_entropy": self.exit_entropy,
            "dim_lower": self.dim_lower,
            "dim_point": self.dim_point,
            "dim_upper": self.dim_upper,
            "meta": self.meta,
        }
        return d

    def tsv_row(self, spec_id: str) -> str:
        def f(x):
            return "" if x is None else format(x, ".17g")

        return "\t".join([spec_id, self.verdict, f(self.ell0), f(self.h), f(self.dim_lower),
                          f(self.dim_point), f(self.dim_upper)])


TSV_HEADER = "spec_id\tverdict\tell0\th\tdim_lower\tdim_point\tdim_upper"


def analyze(
    g: BaseGraph,
    weights: Mapping[str, object] | Sequence = (),
    tol: float = 1e-12,
    truncation_radius: int | None = None,
) -> GfSolution:
    """Full analytic pipeline: F, classification, F', Q, nu and the
    asymptotic quantities.

    ``weights`` maps names to ``w(i, j)`` callables (or is a sequence of
    :class:`~conecover.walk.WeightFunction`). Recurrent or critical walks get
    ``ell0 = 0`` and no entropy; ``Lambda = inf`` likewise yields
    ``ell0 = 0``.
    """
    if isinstance(weights, Mapping):
        wlist = list(weights.items())
    else:
        wlist = [(w.name, w) for w in weights]
    sol = solve_F(g, tol=min(tol, 1e-14), truncation_radius=truncation_radius)
    meta = {"F_iterations": sol.iterations, "F_method": sol.method, "F_residual": sol.residual,
            "tolerance": tol, "log": "natural"}
    if not g.finite:
        meta.update(
            truncation_radius=truncation_radius,
            F_lower={vertex_to_str(v): float(x) for v, x in zip(sol.vertices, sol.lower)},
            F_upper={vertex_to_str(v): float(x) for v, x in zip(sol.vertices, sol.upper)},
            brackets_agree=bool(np.max(sol.upper - sol.lower) <= 10 * tol),
            assumption_unverified="positive recurrence of Q cannot be checked on a truncation",
        )
        return GfSolution(sol.vertices, sol.F, "bracket_only", q_loop(g, sol), U_root=root_return(g, sol), meta=meta)
    cls = classify_analytic(g, sol)
    out = GfSolution(sol.vertices, sol.F, cls.verdict, cls.q_loop, cls.spectral_lambda, cls.U_root, meta=meta)
    meta["spectral_note"] = cls.spectral_note
    if cls.verdict != "transient":
        out.ell0 = 0.0
        out.ell_w = {name: 0.0 for name, _ in wlist}
        return out
    fp = solve_Fprime(g, sol, tol)
    Q, Gbar = build_exit_chain(g, sol)
    nu = stationary(Q, max(tol, 1e-12))
    out.Gbar, out.Q, out.nu = Gbar, Q, nu
    hq = exit_chain_entropy(Q, nu)
    out.exit_entropy = hq
    meta["Fprime_method"] = fp.method
    meta["B_spectral_radius"] = fp.radius_B
    if not fp.finite:
        out.Lambda = math.inf
        out.ell0 = 0.0
        out.ell_w = {name: 0.0 for name, _ in wlist}
        meta["Lambda_infinite"] = True
        return out
    out.Fp = fp.Fp
    Lam = float(nu @ (fp.Fp / sol.F))
    out.Lambda = Lam
    out.ell0 = 1.0 / Lam
    for name, w in wlist:
        num = 0.0
        for a, i in enumerate(sol.vertices):
            for c, j in enumerate(sol.vertices):
                if Q[a, c] > 0:
                    num += float(w(i, j)) * nu[a] * Q[a, c]
        out.ell_w[name] = num / Lam
    out.h = out.ell0 * hq
    out.dim_lower = hq
    out.dim_point = hq
    out.dim_upper = -math.log(min_step_probability(g)) / out.ell0
    meta["dim_point_caveat"] = DIM_POINT_CAVEAT
    return out


def same_length_backward_check(g: BaseGraph, max_len: int = 50) -> bool:
    """Sufficient condition for ``nu`` to be the invariant law of the base
    walk: labels reachable from the root by paths of equal length share the
    same backward probability (checked up to ``max_len``)."""
    level = {g.root}
    for _ in range(max_len + 1):
        vals = {g.backward(v) for v in level}
        if max(vals) - min(vals) > 1e-12:
            return False
        level = {j for v in level for j, _ in g.out_edges(v)}
    return True
