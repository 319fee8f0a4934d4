"""Independent checks: feasibility reports and an exact dense LP solver.

:func:`reference_solve` is a two-phase tableau simplex with Bland's rule over
the standard form obtained by shifting/splitting bounded variables.  It is
meant for small fixtures only and shares no code with the ADMM path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decompose import DecomposedModel
from .exceptions import OracleSizeError
from .lp import LinearSystem


@dataclass
class FeasibilityReport:
    max_equality_violation: float
    max_bound_violation: float
    objective: float
    worst_rows: list[tuple[str, float]] = field(default_factory=list)

    def ok(self, tol: float) -> bool:
        return self.max_equality_violation <= tol and self.max_bound_violation <= tol

    def as_dict(self) -> dict:
        return {
            "max_equality_violation": self.max_equality_violation,
            "max_bound_violation": self.max_bound_violation,
            "objective": self.objective,
            "worst_rows": [{"row": tag, "violation": v} for tag, v in self.worst_rows],
        }


def check_feasibility(model: LinearSystem, x, tol: float = 1e-9, top: int = 5) -> FeasibilityReport:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.A.shape[1],):
        raise ValueError(f"x has shape {x.shape}, expected ({model.A.shape[1]},)")
    viol = np.abs(model.A @ x - model.b)
    bound = np.maximum(np.maximum(model.x_lo - x, x - model.x_hi), 0.0)
    order = np.argsort(-viol, kind="stable")[:top]
    worst = [(str(model.row_tags[r]), float(viol[r])) for r in order if viol[r] > tol]
    return FeasibilityReport(
        max_equality_violation=float(viol.max(initial=0.0)),
        max_bound_violation=float(bound.max(initial=0.0)),
        objective=float(model.c @ x),
        worst_rows=worst,
    )


def reconstruct_centralized(x, z, model: DecomposedModel) -> np.ndarray:
    """Clamp of the per-column average of the local copies.

    ``x`` is accepted for interface symmetry; at exact consensus the result
    equals it.
    """
    avg = np.bincount(model.gather_index, weights=np.asarray(z, float), minlength=model.n) / model.copy_counts
    return np.minimum(np.maximum(avg, model.x_lo), model.x_hi)


@dataclass
class OracleResult:
    x: np.ndarray | None
    objective: float
    status: str
    y: np.ndarray | None = None
    kkt_residual: float = np.nan
    pivots: int = 0


def kkt_residual(model: LinearSystem, x, y) -> float:
    """Largest violation among primal feasibility, dual sign and complementarity.

    Reduced costs ``r = c - A^T y`` are split into lower/upper bound
    multipliers; a multiplier on an infinite bound counts in full.
    """
    x = np.asarray(x, float)
    r = model.c - model.A.T @ y
    primal = max(float(np.abs(model.A @ x - model.b).max(initial=0.0)),
                 float(np.maximum(model.x_lo - x, 0).max(initial=0.0)),
                 float(np.maximum(x - model.x_hi, 0).max(initial=0.0)))
    mu_lo = np.maximum(r, 0.0)
    mu_hi = np.maximum(-r, 0.0)
    with np.errstate(invalid="ignore"):
        gap_lo = np.where(np.isfinite(model.x_lo), mu_lo * (x - model.x_lo), mu_lo)
        gap_hi = np.where(np.isfinite(model.x_hi), mu_hi * (model.x_hi - x), mu_hi)
    return max(primal, float(np.abs(gap_lo).max(initial=0.0)), float(np.abs(gap_hi).max(initial=0.0)))


class _Tableau:
    """Dense simplex tableau ``[T | rhs]`` with an objective row at the bottom."""

    def __init__(self, A, b, tol):
        m, n = A.shape
        self.tol = tol
        self.T = np.zeros((m + 1, n + m + 1))
        self.T[:m, :n] = A
        self.T[:m, n:n + m] = np.eye(m)
        self.T[:m, -1] = b
        self.basis = list(range(n, n + m))
        self.n = n
        self.pivots = 0

    def set_objective(self, cost):
        self.T[-1, :] = 0.0
        self.T[-1, :len(cost)] = cost
        for i, j in enumerate(self.basis):
            if self.T[-1, j] != 0.0:
                self.T[-1] -= self.T[-1, j] * self.T[i]

    def pivot(self, i, j):
        T = self.T
        T[i] /= T[i, j]
        col = T[:, j].copy()
        col[i] = 0.0
        T -= np.outer(col, T[i])
        self.basis[i] = j
        self.pivots += 1

    def run(self, allowed) -> str:
        T, tol = self.T, self.tol
        while True:
            reduced = T[-1, :-1]
            candidates = [j for j in allowed if reduced[j] < -tol]
            if not candidates:
                return "optimal"
            j = candidates[0]  # Bland: lowest index enters
            col = T[:-1, j]
            rows = np.flatnonzero(col > tol)
            if len(rows) == 0:
                return "unbounded"
            ratios = T[rows, -1] / col[rows]
            best = ratios.min()
            ties = rows[ratios <= best + tol * max(1.0, abs(best))]
            i = min(ties, key=lambda r: self.basis[r])  # Bland: lowest basic index leaves
            self.pivot(i, j)


def _standard_form(model: LinearSystem):
    """Map ``lo <= x <= hi`` to ``x' >= 0`` with extra rows for upper bounds.

    Returns ``(A', b', c', recover)`` where ``recover(x')`` gives ``x``.
    """
    A = model.A.toarray()
    m, n = A.shape
    cols, costs, upper_rows = [], [], []
    shift = np.zeros(n)
    plan = []  # (original column, sign) per standard column
    for j in range(n):
        lo, hi = model.x_lo[j], model.x_hi[j]
        if np.isfinite(lo):
            shift[j] = lo
            plan.append((j, 1.0))
            if np.isfinite(hi):
                upper_rows.append((len(plan) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            plan.append((j, -1.0))
        else:
            plan.append((j, 1.0))
            plan.append((j, -1.0))
    n_std = len(plan)
    k = len(upper_rows)
    As = np.zeros((m + k, n_std + k))
    cs = np.zeros(n_std + k)
    for col, (j, sign) in enumerate(plan):
        As[:m, col] = sign * A[:, j]
        cs[col] = sign * model.c[j]
    for r, (col, width) in enumerate(upper_rows):
        As[m + r, col] = 1.0
        As[m + r, n_std + r] = 1.0
    bs = np.concatenate([model.b - A @ shift, [w for _, w in upper_rows]])

    def recover(xs):
        x = shift.copy()
        for col, (j, sign) in enumerate(plan):
            x[j] += sign * xs[col]
        return x

    return As, bs, cs, recover


def reference_solve(model: LinearSystem, max_variables: int = 2000, tol: float = 1e-9) -> OracleResult:
    """Exact LP solution of ``min c^T x, A x = b, x_lo <= x <= x_hi``."""
    if model.A.shape[1] > max_variables:
        raise OracleSizeError(f"{model.A.shape[1]} variables exceed the oracle limit of {max_variables}")
    As, bs, cs, recover = _standard_form(model)
    m_orig = model.A.shape[0]
    flip = np.where(bs < 0, -1.0, 1.0)
    As = As * flip[:, None]
    bs = bs * flip
    M, N = As.shape

    tab = _Tableau(As, bs, tol)
    phase1 = np.concatenate([np.zeros(N), np.ones(M)])
    tab.set_objective(phase1)
    tab.run(range(N + M))
    scale = max(1.0, float(np.abs(bs).max(initial=0.0)))
    if -tab.T[-1, -1] > 1e-7 * scale:
        return OracleResult(None, np.nan, "infeasible", pivots=tab.pivots)

    # drive zero-level artificials out of the basis; rows that cannot pivot are redundant
    keep = []
    for i in range(M):
        if tab.basis[i] >= N:
            row = tab.T[i, :N]
            j = next((j for j in range(N) if abs(row[j]) > 1e-7), None)
            if j is None:
                continue
            tab.pivot(i, j)
        keep.append(i)
    T = np.hstack([tab.T[keep, :N], tab.T[keep, -1:]])
    basis = [tab.basis[i] for i in keep]
    tab2 = _Tableau.__new__(_Tableau)
    tab2.tol, tab2.n, tab2.pivots = tol, N, tab.pivots
    tab2.T = np.vstack([T, np.zeros((1, N + 1))])
    tab2.basis = basis
    tab2.set_objective(cs)
    status = tab2.run(range(N))
    if status == "unbounded":
        return OracleResult(None, -np.inf, "unbounded", pivots=tab2.pivots)

    # refine basic values and duals from the final basis
    rows = np.array(keep)
    Bm = As[np.ix_(rows, basis)]
    xs = np.zeros(N)
    xs[basis] = np.linalg.solve(Bm, bs[rows])
    xs = np.maximum(xs, 0.0)
    y_std = np.zeros(M)
    y_std[rows] = np.linalg.solve(Bm.T, cs[basis])
    y = (y_std * flip)[:m_orig]
    x = recover(xs)
    return OracleResult(x, float(model.c @ x), "optimal", y, kkt_residual(model, x, y), tab2.pivots)
