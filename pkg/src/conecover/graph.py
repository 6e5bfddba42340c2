"""Base graphs whose directed covers carry the random walk.

A base graph ``G`` is given by a root label, a forward kernel ``pG(i, j)`` on
its directed edges and a backward probability ``p(-i)`` per vertex. The
nearest-neighbour walk on the cover moves from a vertex of label ``i`` to its
parent with probability ``p(-i)`` and to a child of label ``j`` with
probability ``p(i, j) = (1 - p(-i)) * pG(i, j)``.

Two flavours exist: :class:`FiniteGraph` (explicit JSON spec) and
:class:`GeneratorGraph` (labels produced lazily by a pure function, see
:mod:`conecover.generators`).
"""

from __future__ import annotations

import hashlib
import json
import warnings
from collections import Counter, deque
from functools import lru_cache
from typing import Callable, Hashable, Iterable, Mapping, Sequence

from .errors import (
    BackwardProbOutOfRange,
    GeneratorFailure,
    MultiEdgeDetected,
    RowNotStochastic,
    SpecError,
    UnknownVertex,
    UnreachableVertex,
)

VertexId = Hashable

STOCHASTIC_TOL = 1e-12
DEFAULT_EPSILON = 1e-6


def vertex_to_str(v: VertexId) -> str:
    """Serialize a vertex id (structured generator tokens become JSON text)."""
    if isinstance(v, str):
        return v
    if isinstance(v, tuple):
        return json.dumps(v, separators=(",", ":"))
    return str(v)


class BaseGraph:
    """Common interface; subclasses provide ``_row(i)`` and ``_backward(i)``.

    ``out_edges(i)`` returns ``((j, pG), ...)`` in a fixed order; the walk
    simulator selects children by inverse CDF over this order.
    """

    root: VertexId
    epsilon: float
    degree_bound: int | None
    name: str = "graph"

    @property
    def finite(self) -> bool:
        return False

    def out_edges(self, i: VertexId) -> tuple[tuple[VertexId, float], ...]:
        return tuple((j, pg) for j, pg, _ in self._row(i))

    def forward(self, i: VertexId) -> tuple[tuple[VertexId, float], ...]:
        """Tree-kernel transitions ``((j, p(i, j)), ...)``."""
        return tuple((j, p) for j, _, p in self._row(i))

    def backward(self, i: VertexId) -> float:
        return self._backward(i)

    def p(self, i: VertexId, j: VertexId) -> float:
        for k, _, p in self._row(i):
            if k == j:
                return p
        return 0.0

    def m_row(self, i: VertexId) -> tuple[tuple[VertexId, float], ...]:
        b = self._backward(i)
        return tuple((j, p / b) for j, _, p in self._row(i))

    def a_row(self, i: VertexId) -> tuple[tuple[VertexId, float], ...]:
        return tuple((j, 1.0) for j, _, _ in self._row(i))

    def row(self, i: VertexId, matrix: str = "M") -> tuple[tuple[VertexId, float], ...]:
        if matrix == "M":
            return self.m_row(i)
        if matrix == "A":
            return self.a_row(i)
        raise ValueError(f"unknown matrix {matrix!r}; expected 'A' or 'M'")

    def neighbours(self, i: VertexId) -> tuple[VertexId, ...]:
        """Vertices adjacent to ``i`` in either direction, as far as known."""
        return tuple(j for j, _, _ in self._row(i))

    def ball(self, radius: int, limit: int | None = None) -> list[VertexId]:
        """Breadth-first ball around the root, in discovery order."""
        seen = {self.root: 0}
        order = [self.root]
        queue = deque([self.root])
        while queue:
            v = queue.popleft()
            d = seen[v]
            if d >= radius:
                continue
            for w in self.neighbours(v):
                if w not in seen:
                    seen[w] = d + 1
                    order.append(w)
                    queue.append(w)
                    if limit is not None and len(order) > limit:
                        raise SpecError(f"ball of radius {radius} exceeds {limit} vertices")
        return order

    def spec_hash(self) -> str:
        return hashlib.sha256(self.describe().encode()).hexdigest()[:16]

    def describe(self) -> str:
        raise NotImplementedError

    # subclass hooks
    def _row(self, i):
        raise NotImplementedError

    def _backward(self, i):
        raise NotImplementedError


def _check_row(i, b, targets, pgs, epsilon):
    if not (epsilon < b < 1 - epsilon):
        raise BackwardProbOutOfRange(i, b, epsilon)
    if not targets:
        raise SpecError(f"vertex {i!r} has no out-edges")
    dup = [j for j, c in Counter(targets).items() if c > 1]
    if dup:
        raise MultiEdgeDetected(i, dup[0])
    total = sum(pgs)
    if abs(total - 1.0) > STOCHASTIC_TOL or any(pg <= 0 for pg in pgs):
        raise RowNotStochastic(i, total)


class FiniteGraph(BaseGraph):
    """Explicit finite base graph."""

    def __init__(
        self,
        root: VertexId,
        vertices: Sequence[VertexId],
        edges: Mapping[VertexId, Sequence[tuple[VertexId, float]]],
        backward: Mapping[VertexId, float],
        epsilon: float = DEFAULT_EPSILON,
        kernel: str = "pg",
        degree_bound: int | None = None,
        strict: bool = False,
        name: str = "finite",
    ):
        if kernel not in ("pg", "tree"):
            raise SpecError(f"kernel must be 'pg' or 'tree', got {kernel!r}")
        if not 0 < epsilon < 1:
            raise SpecError(f"epsilon must lie in (0, 1), got {epsilon!r}")
        self.vertices = list(vertices)
        if len(set(self.vertices)) != len(self.vertices):
            raise SpecError("duplicate vertex names")
        self.index = {v: k for k, v in enumerate(self.vertices)}
        if root not in self.index:
            raise UnknownVertex(root)
        self.root = root
        self.epsilon = float(epsilon)
        self.kernel = kernel
        self.name = name
        self.warnings: list[str] = []
        rows = {}
        for i in self.vertices:
            if i not in backward:
                raise SpecError(f"missing backward probability for {i!r}")
            b = float(backward[i])
            out = list(edges.get(i, ()))
            for j, _ in out:
                if j not in self.index:
                    raise UnknownVertex(j)
            targets = [j for j, _ in out]
            if kernel == "pg":
                pgs = [float(x) for _, x in out]
                _check_row(i, b, targets, pgs, self.epsilon)
                rows[i] = tuple((j, pg, (1.0 - b) * pg) for j, pg in zip(targets, pgs))
            else:
                ps = [float(x) for _, x in out]
                if not (self.epsilon < b < 1 - self.epsilon):
                    raise BackwardProbOutOfRange(i, b, self.epsilon)
                total = b + sum(ps)
                if abs(total - 1.0) > STOCHASTIC_TOL or any(p <= 0 for p in ps):
                    raise RowNotStochastic(i, total)
                pgs = [p / (1.0 - b) for p in ps]
                _check_row(i, b, targets, [pg / sum(pgs) for pg in pgs], self.epsilon)
                rows[i] = tuple((j, pg, p) for j, pg, p in zip(targets, pgs, ps))
        self._rows = rows
        self._back = {i: float(backward[i]) for i in self.vertices}
        max_deg = max(len(r) for r in rows.values())
        if degree_bound is not None and max_deg > degree_bound:
            raise SpecError(f"out-degree {max_deg} exceeds declared bound {degree_bound}")
        self.degree_bound = degree_bound if degree_bound is not None else max_deg
        self._preds = {v: [] for v in self.vertices}
        for i, r in rows.items():
            for j, _, _ in r:
                self._preds[j].append(i)
        reach = self._reachable()
        for v in self.vertices:
            if v not in reach:
                if strict:
                    raise UnreachableVertex(v)
                msg = str(UnreachableVertex(v))
                self.warnings.append(msg)
                warnings.warn(msg, stacklevel=2)

    @property
    def finite(self) -> bool:
        return True

    def __len__(self) -> int:
        return len(self.vertices)

    def _reachable(self):
        seen = {self.root}
        queue = deque([self.root])
        while queue:
            v = queue.popleft()
            for j, _, _ in self._rows[v]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return seen

    def _row(self, i):
        try:
            return self._rows[i]
        except KeyError:
            raise UnknownVertex(i) from None

    def _backward(self, i):
        try:
            return self._back[i]
        except KeyError:
            raise UnknownVertex(i) from None

    def neighbours(self, i):
        out = [j for j, _, _ in self._row(i)]
        seen = set(out)
        out.extend(k for k in self._preds[i] if k not in seen)
        return tuple(out)

    def matrix(self, which: str = "M"):
        """Dense numpy matrix indexed like ``self.vertices``."""
        import numpy as np

        n = len(self.vertices)
        out = np.zeros((n, n))
        for a, i in enumerate(self.vertices):
            for j, x in self.row(i, which):
                out[a, self.index[j]] = x
        return out

    def tree_kernel(self):
        """(P, b): dense forward tree kernel and backward vector."""
        import numpy as np

        n = len(self.vertices)
        P = np.zeros((n, n))
        for a, i in enumerate(self.vertices):
            for j, _, p in self._rows[i]:
                P[a, self.index[j]] = p
        b = np.array([self._back[i] for i in self.vertices])
        return P, b

    def to_spec(self) -> dict:
        key = "p" if self.kernel == "tree" else "pg"
        edges = []
        for i in self.vertices:
            for j, pg, p in self._rows[i]:
                edges.append({"from": i, "to": j, key: p if key == "p" else pg})
        return {
            "epsilon": self.epsilon,
            "kernel": self.kernel,
            "root": self.root,
            "vertices": list(self.vertices),
            "edges": edges,
            "backward": {i: self._back[i] for i in self.vertices},
        }

    def describe(self) -> str:
        return json.dumps(self.to_spec(), sort_keys=True, default=vertex_to_str)


class GeneratorGraph(BaseGraph):
    """Lazily generated (usually infinite) base graph.

    ``row_fn(i)`` returns ``[(j, x), ...]`` where ``x`` is ``pG`` or the tree
    kernel ``p`` depending on ``kernel``; ``backward_fn(i)`` returns ``p(-i)``.
    Rows are validated the first time they are queried.
    """

    def __init__(
        self,
        name: str,
        params: Mapping,
        root: VertexId,
        row_fn: Callable[[VertexId], Iterable[tuple[VertexId, float]]],
        backward_fn: Callable[[VertexId], float],
        epsilon: float,
        degree_bound: int | None,
        kernel: str = "pg",
        predecessors_fn: Callable[[VertexId], Iterable[VertexId]] | None = None,
        finite_hint: int | None = None,
    ):
        self.name = name
        self.params = dict(params)
        self.root = root
        self.epsilon = float(epsilon)
        self.degree_bound = degree_bound
        self.kernel = kernel
        self.finite_hint = finite_hint
        self._row_fn = row_fn
        self._backward_fn = backward_fn
        self._pred_fn = predecessors_fn
        self._row = lru_cache(maxsize=None)(self._make_row)

    @property
    def bounded(self) -> bool:
        return self.degree_bound is not None

    def _make_row(self, i):
        try:
            b = float(self._backward_fn(i))
            raw = [(j, float(x)) for j, x in self._row_fn(i)]
        except (ValueError, KeyError, TypeError, IndexError) as exc:
            raise GeneratorFailure(i, exc) from exc
        targets = [j for j, _ in raw]
        if self.kernel == "tree":
            if not (self.epsilon < b < 1 - self.epsilon):
                raise BackwardProbOutOfRange(i, b, self.epsilon)
            total = b + sum(x for _, x in raw)
            if abs(total - 1.0) > STOCHASTIC_TOL:
                raise RowNotStochastic(i, total)
            pgs = [x / (1.0 - b) for _, x in raw]
            _check_row(i, b, targets, [pg / sum(pgs) for pg in pgs], self.epsilon)
            row = tuple((j, pg, p) for (j, p), pg in zip(raw, pgs))
        else:
            pgs = [x for _, x in raw]
            _check_row(i, b, targets, pgs, self.epsilon)
            row = tuple((j, pg, (1.0 - b) * pg) for j, pg in raw)
        if self.degree_bound is not None and len(row) > self.degree_bound:
            raise GeneratorFailure(i, f"out-degree {len(row)} exceeds bound {self.degree_bound}")
        return row

    def _backward(self, i):
        return self._backward_fn(i)

    def neighbours(self, i):
        out = [j for j, _, _ in self._row(i)]
        if self._pred_fn is not None:
            seen = set(out)
            out.extend(k for k in self._pred_fn(i) if k not in seen)
        return tuple(out)

    def describe(self) -> str:
        return json.dumps({"generator": self.name, "params": self.params}, sort_keys=True)


# ---------------------------------------------------------------------------
# spec parsing


def _load(raw) -> dict:
    if isinstance(raw, Mapping):
        return dict(raw)
    if isinstance(raw, bytes):
        raw = raw.decode()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SpecError(f"spec is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SpecError("spec must be a JSON object")
    return doc


def _edge_value(e: Mapping, kernel: str) -> float:
    key = "pg" if kernel == "pg" else "p"
    if key not in e:
        raise SpecError(f"edge {e!r} lacks {key!r} (kernel {kernel!r})")
    other = "p" if key == "pg" else "pg"
    if other in e:
        raise SpecError(f"edge {e!r} mixes 'pg' and 'p'; one convention per file")
    return float(e[key])


def validate_spec(raw, strict: bool = False) -> BaseGraph:
    """Parse a JSON spec (text or mapping) into a validated base graph.

    Generator specs (``{"generator": name, "params": {...}}``) are
    dispatched to :func:`conecover.generators.make_generator`.
    """
    doc = _load(raw)
    if "generator" in doc:
        from .generators import make_generator

        return make_generator(doc["generator"], doc.get("params", {}))
    for key in ("root", "vertices", "edges", "backward"):
        if key not in doc:
            raise SpecError(f"spec lacks required key {key!r}")
    kernel = doc.get("kernel")
    if kernel is None:
        has_p = any("p" in e for e in doc["edges"])
        kernel = "tree" if has_p else "pg"
    edges: dict = {}
    for e in doc["edges"]:
        edges.setdefault(e["from"], []).append((e["to"], _edge_value(e, kernel)))
    return FiniteGraph(
        root=doc["root"],
        vertices=doc["vertices"],
        edges=edges,
        backward=doc["backward"],
        epsilon=float(doc.get("epsilon", DEFAULT_EPSILON)),
        kernel=kernel,
        degree_bound=doc.get("degree_bound"),
        strict=strict,
        name=doc.get("name", "finite"),
    )


def expand_multiedges(raw) -> dict:
    """Replace parallel edges by fresh cloned vertices.

    For ``m`` parallel edges ``i -> j`` the first keeps target ``j`` and the
    others point to fresh vertices ``j_1 .. j_{m-1}``, each a copy of ``j``
    (same backward probability, same expanded out-edges). Covers of input and
    output agree as unlabelled rooted trees. Parallel edges may be listed
    repeatedly or through an integer ``"multiplicity"`` whose copies share the
    stated probability equally.
    """
    doc = _load(raw)
    kernel = doc.get("kernel") or ("tree" if any("p" in e for e in doc["edges"]) else "pg")
    key = "pg" if kernel == "pg" else "p"
    groups: dict = {}
    order: dict = {}
    for e in doc["edges"]:
        mult = int(e.get("multiplicity", 1))
        if mult < 1:
            raise SpecError(f"multiplicity must be >= 1 in {e!r}")
        val = _edge_value(e, kernel)
        i, j = e["from"], e["to"]
        order.setdefault(i, [])
        if j not in groups.setdefault(i, {}):
            groups[i][j] = []
            order[i].append(j)
        groups[i][j].extend([val / mult] * mult)
    if all(len(c) == 1 for g in groups.values() for c in g.values()):
        out = dict(doc)
        out["edges"] = [
            {k: v for k, v in e.items() if k != "multiplicity"} for e in doc["edges"]
        ]
        return out

    names = set(doc["vertices"])
    fresh: dict = {}  # clone name -> original target

    def clone_name(i, j, k):
        base = f"{j}~{i}~{k}"
        name = base
        n = 0
        while name in names:
            n += 1
            name = f"{base}~{n}"
        names.add(name)
        return name

    expanded: dict = {}
    for i in doc["vertices"]:
        row = []
        for j in order.get(i, []):
            vals = groups[i][j]
            row.append((j, vals[0]))
            for k, v in enumerate(vals[1:], start=1):
                c = clone_name(i, j, k)
                fresh[c] = j
                row.append((c, v))
        expanded[i] = row
    vertices = list(doc["vertices"]) + list(fresh)
    backward = dict(doc["backward"])
    edges = []
    for i in doc["vertices"]:
        for j, v in expanded[i]:
            edges.append({"from": i, "to": j, key: v})
    for c, j in fresh.items():
        backward[c] = doc["backward"][j]
        for t, v in expanded[j]:
            edges.append({"from": c, "to": t, key: v})
    out = {k: v for k, v in doc.items() if k not in ("edges", "vertices", "backward")}
    out.update(kernel=kernel, vertices=vertices, edges=edges, backward=backward)
    return out


def m_entry(g: BaseGraph, i: VertexId, j: VertexId) -> float:
    """Entry ``m(i, j) = p(i, j) / p(-i)`` of the mean matrix; 0 off-edge."""
    row = g._row(i)
    for k, _, p in row:
        if k == j:
            return p / g.backward(i)
    return 0.0


def load_spec(path, strict: bool = False) -> BaseGraph:
    with open(path) as fh:
        return validate_spec(fh.read(), strict=strict)
