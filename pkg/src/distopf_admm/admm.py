"""Solver-free consensus ADMM.

Bounds live only in the global block, so every step has a closed form:

* global: copy-average of ``z - lambda/rho`` shifted by ``-c/rho``, then clamped
  to the bounds;
* local: affine projection ``x_s = Abar_s d_s / rho + bbar_s`` with
  ``d_s = -rho B_s x - lambda_s``, which satisfies ``A_s x_s = b_s`` exactly;
* dual: ``lambda_s += rho (B_s x - x_s)``.

Local and dual steps run per subsystem on a :class:`WorkerPool`; the global
step and residual reductions are vectorized over the stacked copies in a
fixed order, so traces are bitwise independent of the worker count.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.utils import check_scalar
from sklearn.utils.validation import check_is_fitted

from .decompose import DecomposedModel
from .exceptions import SingularSubsystemError
from .parallel import WorkerPool, default_workers

DEFAULT_RHO = 100.0
DEFAULT_EPS_REL = 1e-3
DEFAULT_MAX_ITER = 50000


@dataclass(frozen=True)
class Settings:
    rho: float = DEFAULT_RHO
    eps_rel: float = DEFAULT_EPS_REL
    max_iter: int = DEFAULT_MAX_ITER
    workers: int = 1

    def __post_init__(self):
        check_scalar(self.rho, "rho", (int, float), min_val=0.0, include_boundaries="neither")
        check_scalar(self.eps_rel, "eps_rel", (int, float), min_val=0.0, include_boundaries="neither")
        check_scalar(self.max_iter, "max_iter", int, min_val=1)
        check_scalar(self.workers, "workers", int, min_val=1)


@dataclass
class Precomputed:
    Abar: list[np.ndarray]
    bbar: list[np.ndarray]
    inv_copy_counts: np.ndarray
    gather: np.ndarray
    slices: list[slice]

    @property
    def scatter(self) -> list[list[tuple[int, int]]]:
        """Per global column, the ``(s, local index)`` copies that map to it."""
        out: list[list[tuple[int, int]]] = [[] for _ in self.inv_copy_counts]
        for s, sl in enumerate(self.slices):
            for k, g in enumerate(self.gather[sl]):
                out[g].append((s, k))
        return out


class TraceRecord(NamedTuple):
    t: int
    pres: float
    dres: float
    eps_prim: float
    eps_dual: float
    objective: float


@dataclass
class IterationState:
    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    t: int = 1
    trace: list[TraceRecord] = field(default_factory=list)


@dataclass
class SolveResult:
    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    trace: list[TraceRecord]
    status: str
    objective: float
    n_iter: int
    timings: dict[str, float]
    iterates: list[tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None


def _projector(A: np.ndarray, b: np.ndarray, s: int, cond_limit: float):
    n = A.shape[1]
    if A.shape[0] == 0:
        return -np.eye(n), np.zeros(n)
    # A^T = Q R, so A^T (A A^T)^{-1} A = Q Q^T and A^T (A A^T)^{-1} b = Q R^{-T} b;
    # this avoids forming A A^T, whose condition number is the square of A's
    Q, R = scipy.linalg.qr(A.T, mode="economic")
    diag = np.abs(np.diag(R))
    cond = (diag.max() / diag.min()) ** 2 if diag.min() > 0 else np.inf
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularSubsystemError(s, f"A_s A_s^T is numerically singular (condition estimate {cond:.3g})")
    Abar = Q @ Q.T - np.eye(n)
    bbar = Q @ scipy.linalg.solve_triangular(R, b, trans="T")
    return Abar, bbar


def precompute(model: DecomposedModel, workers: int = 1, cond_limit: float = 1e12) -> Precomputed:
    """Local projection operators and the diagonal of ``(B^T B)^{-1}``."""
    Abar: list = [None] * model.S
    bbar: list = [None] * model.S

    def body(s):
        sub = model.subsystems[s]
        Abar[s], bbar[s] = _projector(sub.A, sub.b, s, cond_limit)

    with WorkerPool(workers) as pool:
        pool.run(model.S, body)
    offsets = model.offsets
    slices = [slice(int(offsets[s]), int(offsets[s + 1])) for s in range(model.S)]
    return Precomputed(Abar, bbar, 1.0 / model.copy_counts.astype(float), model.gather_index, slices)


def initialize(model: DecomposedModel) -> IterationState:
    """Voltage copies start at 1, bounded copies at their midpoint, others at 0."""
    g = model.gather_index
    lo, hi = model.x_lo[g], model.x_hi[g]
    both = np.isfinite(lo) & np.isfinite(hi)
    z = np.clip(np.zeros(len(g)), lo, hi)
    z[both] = 0.5 * (lo[both] + hi[both])
    is_w = np.array([model.var_table[j].kind == "w" for j in g], dtype=bool) if model.var_table else np.zeros(len(g), bool)
    z[is_w] = 1.0
    lam = np.zeros_like(z)
    avg = np.bincount(g, weights=z, minlength=model.n) / model.copy_counts
    x = np.clip(avg, model.x_lo, model.x_hi)
    return IterationState(x=x, z=z, lam=lam, t=1)


def global_update(state: IterationState, pre: Precomputed, model: DecomposedModel, rho: float) -> np.ndarray:
    acc = np.bincount(pre.gather, weights=state.z - state.lam / rho, minlength=model.n)
    x_hat = pre.inv_copy_counts * (acc - model.c / rho)
    return np.minimum(np.maximum(x_hat, model.x_lo), model.x_hi)


def local_update(s: int, x: np.ndarray, lambda_s: np.ndarray, pre: Precomputed, rho: float) -> np.ndarray:
    d = -rho * x[pre.gather[pre.slices[s]]] - lambda_s
    return pre.Abar[s] @ d / rho + pre.bbar[s]


def dual_update(s: int, x: np.ndarray, x_s: np.ndarray, lambda_s: np.ndarray, pre: Precomputed, rho: float) -> np.ndarray:
    return lambda_s + rho * (x[pre.gather[pre.slices[s]]] - x_s)


def residuals(x, z, z_prev, lam, gather, rho, eps_rel):
    """``(pres, dres, eps_prim, eps_dual)``.

    ``B_s^T`` scatters a local vector into distinct global slots, so its norm
    equals the local norm; sums over subsystems are taken over the stacked
    vectors in subsystem order.
    """
    bx = x[gather]
    pres = float(np.linalg.norm(bx - z))
    dres = rho * float(np.linalg.norm(z - z_prev))
    eps_prim = eps_rel * max(float(np.linalg.norm(bx)), float(np.linalg.norm(z)))
    eps_dual = eps_rel * float(np.linalg.norm(lam))
    return pres, dres, eps_prim, eps_dual


def solve(model: DecomposedModel, settings: Settings | None = None, *, record_iterates: bool = False,
          pre: Precomputed | None = None, callback=None) -> SolveResult:
    """Run the ADMM loop until both residual tests pass or ``max_iter``.

    ``callback(state)`` is called with the :class:`IterationState` after every
    iteration; it must not modify the arrays.
    """
    settings = settings or Settings()
    rho, eps_rel = float(settings.rho), float(settings.eps_rel)
    timings = {"precompute": 0.0, "global": 0.0, "local": 0.0, "dual": 0.0, "residual": 0.0}

    t0 = time.perf_counter()
    if pre is None:
        pre = precompute(model, settings.workers)
    timings["precompute"] = time.perf_counter() - t0

    state = initialize(model)
    iterates = [] if record_iterates else None
    if record_iterates:
        iterates.append((state.x.copy(), state.z.copy(), state.lam.copy()))
    status = "iteration_limit"
    z_next = np.empty_like(state.z)
    lam_next = np.empty_like(state.lam)

    with WorkerPool(settings.workers) as pool:
        for _ in range(settings.max_iter):
            t0 = time.perf_counter()
            x = global_update(state, pre, model, rho)
            t1 = time.perf_counter()

            def local_body(s):
                sl = pre.slices[s]
                z_next[sl] = local_update(s, x, state.lam[sl], pre, rho)

            pool.run(model.S, local_body)
            t2 = time.perf_counter()

            def dual_body(s):
                sl = pre.slices[s]
                lam_next[sl] = dual_update(s, x, z_next[sl], state.lam[sl], pre, rho)

            pool.run(model.S, dual_body)
            t3 = time.perf_counter()

            z_prev = state.z
            state.x, state.z, state.lam = x, z_next.copy(), lam_next.copy()
            pres, dres, eps_p, eps_d = residuals(x, state.z, z_prev, state.lam, pre.gather, rho, eps_rel)
            state.trace.append(TraceRecord(state.t, pres, dres, eps_p, eps_d, float(model.c @ x)))
            state.t += 1
            if record_iterates:
                iterates.append((x.copy(), state.z.copy(), state.lam.copy()))
            if callback is not None:
                callback(state)
            t4 = time.perf_counter()
            timings["global"] += t1 - t0
            timings["local"] += t2 - t1
            timings["dual"] += t3 - t2
            timings["residual"] += t4 - t3
            if pres <= eps_p and dres <= eps_d:
                status = "converged"
                break

    return SolveResult(state.x, state.z, state.lam, state.trace, status, float(model.c @ state.x),
                       len(state.trace), timings, iterates)


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TraceRecord._fields)
        for rec in trace:
            writer.writerow([rec.t] + [repr(float(v)) for v in rec[1:]])


class SolverFreeADMM(BaseEstimator):
    """Consensus ADMM whose subproblems are all closed-form.

    Parameters
    ----------
    rho : float, default=100.0
        Fixed penalty parameter.
    eps_rel : float, default=1e-3
        Relative tolerance of the primal/dual residual test.
    max_iter : int, default=50000
        Iteration cap; reaching it sets ``status_ = "iteration_limit"``.
    workers : int or None, default=None
        Worker threads for the local and dual steps; ``None`` uses all CPUs.
    record_iterates : bool, default=False
        Keep ``(x, z, lambda)`` after every iteration in ``iterates_``.

    Attributes
    ----------
    x_ : ndarray
        Global solution after the last global update (within bounds).
    z_, lambda_ : ndarray
        Stacked local copies and duals.
    trace_ : list of TraceRecord
        One record per iteration.
    status_ : {"converged", "iteration_limit"}
    n_iter_ : int
    objective_ : float
        ``c @ x_``.
    timings_ : dict
        Wall-clock seconds per phase.
    """

    def __init__(self, rho: float = DEFAULT_RHO, eps_rel: float = DEFAULT_EPS_REL,
                 max_iter: int = DEFAULT_MAX_ITER, workers: int | None = None, record_iterates: bool = False):
        self.rho = rho
        self.eps_rel = eps_rel
        self.max_iter = max_iter
        self.workers = workers
        self.record_iterates = record_iterates

    def _settings(self) -> Settings:
        workers = default_workers() if self.workers is None else self.workers
        return Settings(rho=self.rho, eps_rel=self.eps_rel, max_iter=self.max_iter, workers=workers)

    def fit(self, X: DecomposedModel, y=None):
        if not isinstance(X, DecomposedModel):
            raise TypeError(
                f"expected a DecomposedModel, got {type(X).__name__}; "
                "chain FeederAssembler and ComponentDecomposer in a Pipeline to start from a Feeder"
            )
        settings = self._settings()
        res = solve(X, settings, record_iterates=self.record_iterates)
        self.model_ = X
        self.x_ = res.x
        self.z_ = res.z
        self.lambda_ = res.lam
        self.trace_ = res.trace
        self.status_ = res.status
        self.n_iter_ = res.n_iter
        self.objective_ = res.objective
        self.timings_ = res.timings
        self.iterates_ = res.iterates
        return self

    @property
    def converged_(self) -> bool:
        return self.status_ == "converged"

    def solution(self) -> dict:
        """Global solution keyed by variable."""
        check_is_fitted(self, "x_")
        return dict(zip(self.model_.var_table, self.x_.tolist()))
