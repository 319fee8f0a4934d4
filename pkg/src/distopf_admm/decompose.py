"""Component-wise decomposition of the centralized LP.

Every bus and every line becomes a component, except that a leaf bus is
merged into its single incident line.  Each component owns the rows tagged
to its members and gets a local copy of every column those rows touch (plus
the columns its members own), which defines the 0-1 consensus map ``B_s``
through ``local_to_global``.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DistOPFError, InfeasibleSubsystemError
from .feeder import Feeder
from .lp import LinearSystem
from .parallel import WorkerPool

Member = tuple[str, str]  # ("bus" | "line", id)


@dataclass(frozen=True)
class Component:
    id: str
    kind: Literal["bus_node", "line_edge", "merged_leaf"]
    members: frozenset[Member]


@dataclass
class Subsystem:
    index: int
    component: str
    A: np.ndarray
    b: np.ndarray
    local_to_global: np.ndarray
    rows: np.ndarray = field(repr=False)
    rank_drop: int = 0

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def B(self, n_global: int) -> np.ndarray:
        """Dense 0-1 consensus matrix; for tests and debugging only."""
        out = np.zeros((self.n, n_global))
        out[np.arange(self.n), self.local_to_global] = 1.0
        return out


@dataclass
class DecomposedModel:
    subsystems: list[Subsystem]
    c: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    copy_counts: np.ndarray
    var_table: list = field(default_factory=list, repr=False)
    system: LinearSystem | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def S(self) -> int:
        return len(self.subsystems)

    @property
    def gather_index(self) -> np.ndarray:
        """Concatenated local-to-global maps, i.e. the row structure of stacked B."""
        if not self.subsystems:
            return np.zeros(0, dtype=np.intp)
        return np.concatenate([s.local_to_global for s in self.subsystems])

    @property
    def offsets(self) -> np.ndarray:
        return np.cumsum([0] + [s.n for s in self.subsystems])

    def stats(self) -> dict:
        return {"m": _summary([s.m for s in self.subsystems]), "n": _summary([s.n for s in self.subsystems])}

    def describe(self) -> list[dict]:
        return [
            {"s": s.index, "component": s.component, "m": s.m, "n": s.n, "rank_drop": s.rank_drop,
             "local_to_global": s.local_to_global.tolist()}
            for s in self.subsystems
        ]


def _summary(values: list[int]) -> dict:
    if not values:
        return {"min": 0, "max": 0, "mean": 0.0, "stdev": 0.0, "sum": 0}
    return {
        "min": min(values),
        "max": max(values),
        "mean": statistics.fmean(values),
        "stdev": statistics.stdev(values) if len(values) > 1 else 0.0,
        "sum": sum(values),
    }


def build_component_graph(f: Feeder, merge_leaves: bool = True) -> list[Component]:
    """Bus and line components, with each leaf bus folded into its line.

    When both ends of a line are leaves (a two-bus feeder) only the to-bus is
    merged, so the feeder still yields two components.
    """
    g = f.graph()
    leaves = {i for i in f.buses if g.degree(i) == 1} if merge_leaves else set()
    absorbed: dict[str, str] = {}
    for e in sorted(f.lines):
        line = f.lines[e]
        for end in (line.to_bus, line.from_bus):
            if end in leaves and end not in absorbed:
                absorbed[end] = e
                break

    comps = [
        Component(i, "bus_node", frozenset({("bus", i)}))
        for i in sorted(f.buses) if i not in absorbed
    ]
    merged = {e: i for i, e in absorbed.items()}
    for e in sorted(f.lines):
        if e in merged:
            comps.append(Component(f"{e}+{merged[e]}", "merged_leaf", frozenset({("line", e), ("bus", merged[e])})))
        else:
            comps.append(Component(e, "line_edge", frozenset({("line", e)})))
    return comps


def partition(model: LinearSystem, comps: list[Component]) -> DecomposedModel:
    """Split rows by owning component; copy every column a component touches."""
    owner: dict[Member, int] = {}
    for s, comp in enumerate(comps):
        for member in comp.members:
            if member in owner:
                raise DistOPFError(f"{member} belongs to more than one component")
            owner[member] = s

    rows_of: list[list[int]] = [[] for _ in comps]
    for r, tag in enumerate(model.row_tags):
        key = (tag.owner_kind, tag.owner) if tag is not None else None
        if key not in owner:
            raise DistOPFError(f"row {r} has no owning component (tag {tag})")
        rows_of[owner[key]].append(r)

    cols_of: list[set[int]] = [set() for _ in comps]
    for j, member in enumerate(model.col_owners):
        if member in owner:
            cols_of[owner[member]].add(j)

    A = model.A.tocsr()
    subsystems = []
    counts = np.zeros(model.A.shape[1], dtype=np.int64)
    for s, comp in enumerate(comps):
        rows = np.array(rows_of[s], dtype=np.intp)
        block = A[rows] if len(rows) else A[:0]
        cols = sorted(cols_of[s] | set(block.indices.tolist()))
        l2g = np.array(cols, dtype=np.intp)
        counts[l2g] += 1
        subsystems.append(Subsystem(
            index=s,
            component=comp.id,
            A=block[:, l2g].toarray() if len(l2g) else np.zeros((len(rows), 0)),
            b=model.b[rows].astype(float),
            local_to_global=l2g,
            rows=rows,
        ))
    if np.any(counts == 0):
        missing = [str(model.var_table[j]) for j in np.flatnonzero(counts == 0)[:5]]
        raise DistOPFError(f"global variables without a local copy: {missing}")
    return DecomposedModel(subsystems, model.c.copy(), model.x_lo.copy(), model.x_hi.copy(), counts,
                           list(model.var_table), model)


def row_reduce(A: np.ndarray, b: np.ndarray, tol: float = 1e-9, subsystem: int | None = None):
    """Reduced row echelon form of ``[A | b]`` with zero rows removed.

    Gauss-Jordan elimination with partial pivoting; entries with magnitude at
    most ``tol`` count as zero.  Raises :class:`InfeasibleSubsystemError` if a
    zero row of ``A`` keeps a nonzero right-hand side.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    M = np.hstack([A, b.reshape(-1, 1)])
    r = 0
    for col in range(n):
        if r == m:
            break
        p = r + int(np.argmax(np.abs(M[r:, col])))
        if abs(M[p, col]) <= tol:
            M[r:, col] = 0.0
            continue
        if p != r:
            M[[r, p]] = M[[p, r]]
        M[r] /= M[r, col]
        others = np.arange(m) != r
        M[others] -= np.outer(M[others, col], M[r])
        M[others, col] = 0.0
        r += 1
    leftover = M[r:, n]
    if np.any(np.abs(leftover) > tol):
        name = "?" if subsystem is None else subsystem
        raise InfeasibleSubsystemError(name, f"inconsistent equality rows (residual {np.abs(leftover).max():.3g})")
    return M[:r, :n].copy(), M[:r, n].copy()


def reduce_model(model: DecomposedModel, tol: float = 1e-9, workers: int = 1) -> DecomposedModel:
    """Row-reduce every subsystem so each ``A_s`` has full row rank."""
    out: list[Subsystem | None] = [None] * model.S

    def body(s):
        sub = model.subsystems[s]
        A, b = row_reduce(sub.A, sub.b, tol, subsystem=s)
        out[s] = replace(sub, A=A, b=b, rank_drop=sub.m - A.shape[0])

    with WorkerPool(workers) as pool:
        pool.run(model.S, body)
    return replace(model, subsystems=out)


class ComponentDecomposer(TransformerMixin, BaseEstimator):
    """Decompose a feeder's :class:`LinearSystem` into per-component subsystems.

    Parameters
    ----------
    tol : float, default=1e-9
        Absolute zero tolerance for row reduction.
    merge_leaves : bool, default=True
        Fold each leaf bus into its incident line.
    reduce : bool, default=True
        Row-reduce subsystems to full row rank; required before solving.
    workers : int, default=1
        Worker threads for row reduction.
    """

    def __init__(self, tol: float = 1e-9, merge_leaves: bool = True, reduce: bool = True, workers: int = 1):
        self.tol = tol
        self.merge_leaves = merge_leaves
        self.reduce = reduce
        self.workers = workers

    def fit(self, X: LinearSystem, y=None):
        if not isinstance(X, LinearSystem) or X.feeder is None:
            raise TypeError("ComponentDecomposer needs a LinearSystem assembled from a Feeder")
        self.components_ = build_component_graph(X.feeder, self.merge_leaves)
        self.n_components_ = len(self.components_)
        return self

    def transform(self, X: LinearSystem) -> DecomposedModel:
        check_is_fitted(self, "components_")
        model = partition(X, self.components_)
        if self.reduce:
            model = reduce_model(model, self.tol, self.workers)
        return model
