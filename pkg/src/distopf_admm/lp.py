"""Centralized LP assembly: ``min c^T x  s.t.  A x = b,  x_lo <= x <= x_hi``.

The variable vector stacks four blocks in a fixed order: generator outputs,
squared bus voltages, load withdrawals/consumptions, and line flows in both
directions.  The effective load voltage is eliminated by substitution, so it
never appears as a column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import FeederValidationError
from .feeder import Feeder, LineSegment, has_errors, validate_feeder

SQRT3 = math.sqrt(3.0)

VARIABLE_KINDS = (
    "p_gen", "q_gen", "w", "p_bus_load", "q_bus_load", "p_load", "q_load", "p_flow", "q_flow",
)


@dataclass(frozen=True, order=True)
class VariableKey:
    kind: str
    owner: str
    phase: int
    direction: str | None = None

    def __str__(self):
        suffix = f",{self.direction}" if self.direction else ""
        return f"{self.kind}[{self.owner},{self.phase}{suffix}]"


class RowTag(NamedTuple):
    owner_kind: str  # "bus" or "line"
    owner: str
    family: str
    phase: int | None = None

    def __str__(self):
        ph = "" if self.phase is None else f",{self.phase}"
        return f"{self.owner_kind}:{self.owner}:{self.family}{ph}"


class Row(NamedTuple):
    coefs: dict[int, float]
    rhs: float
    tag: RowTag


@dataclass
class LinearSystem:
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    var_table: list[VariableKey]
    row_tags: list[RowTag]
    col_owners: list[tuple[str, str]]
    feeder: Feeder | None = field(default=None, repr=False)

    def __post_init__(self):
        m, n = self.A.shape
        if not (len(self.var_table) == n == len(self.c) == len(self.x_lo) == len(self.x_hi) == len(self.col_owners)):
            raise ValueError("column metadata does not match A")
        if not (len(self.b) == m == len(self.row_tags)):
            raise ValueError("row metadata does not match A")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def column(self, key: VariableKey) -> int:
        return self.var_table.index(key)

    def dump_triplets(self, path) -> None:
        """Plain-text dump: ``A`` triplets followed by ``b``, ``c`` and bounds."""
        coo = self.A.tocoo()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# shape {self.A.shape[0]} {self.A.shape[1]}\n# A row col value\n")
            for i, j, v in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
                fh.write(f"A {i} {j} {v!r}\n")
            for i, (v, tag) in enumerate(zip(self.b, self.row_tags)):
                fh.write(f"b {i} {float(v)!r} {tag}\n")
            for j, key in enumerate(self.var_table):
                fh.write(f"x {j} {float(self.c[j])!r} {float(self.x_lo[j])!r} {float(self.x_hi[j])!r} {key}\n")


def index_variables(f: Feeder) -> list[VariableKey]:
    keys: list[VariableKey] = []
    for k in sorted(f.generators):
        for ph in f.generators[k].phases:
            keys += [VariableKey("p_gen", k, ph), VariableKey("q_gen", k, ph)]
    for i in sorted(f.buses):
        keys += [VariableKey("w", i, ph) for ph in f.buses[i].phases]
    for l in sorted(f.loads):
        for ph in f.loads[l].phases:
            keys += [VariableKey(kind, l, ph) for kind in ("p_bus_load", "q_bus_load", "p_load", "q_load")]
    for e in sorted(f.lines):
        for ph in f.lines[e].phases:
            for d in ("from_to", "to_from"):
                keys += [VariableKey("p_flow", e, ph, d), VariableKey("q_flow", e, ph, d)]
    return keys


def _index(var_table: Sequence[VariableKey]) -> dict[VariableKey, int]:
    return {key: j for j, key in enumerate(var_table)}


def _add(coefs: dict[int, float], col: int, value: float) -> None:
    if value != 0.0:
        coefs[col] = coefs.get(col, 0.0) + value


def build_power_balance(f: Feeder, var_table: Sequence[VariableKey]) -> list[Row]:
    idx = _index(var_table)
    rows = []
    for i in sorted(f.buses):
        bus = f.buses[i]
        for pos, ph in enumerate(bus.phases):
            p: dict[int, float] = {}
            q: dict[int, float] = {}
            for e in sorted(f.lines):
                line = f.lines[e]
                if ph not in line.phases:
                    continue
                for end, d in ((line.from_bus, "from_to"), (line.to_bus, "to_from")):
                    if end == i:
                        _add(p, idx[VariableKey("p_flow", e, ph, d)], 1.0)
                        _add(q, idx[VariableKey("q_flow", e, ph, d)], 1.0)
            for l in sorted(f.loads):
                load = f.loads[l]
                if load.bus == i and ph in load.phases:
                    _add(p, idx[VariableKey("p_bus_load", l, ph)], 1.0)
                    _add(q, idx[VariableKey("q_bus_load", l, ph)], 1.0)
            w = idx[VariableKey("w", i, ph)]
            _add(p, w, bus.g_sh[pos])
            _add(q, w, -bus.b_sh[pos])
            for k in sorted(f.generators):
                gen = f.generators[k]
                if gen.bus == i and ph in gen.phases:
                    _add(p, idx[VariableKey("p_gen", k, ph)], -1.0)
                    _add(q, idx[VariableKey("q_gen", k, ph)], -1.0)
            rows.append(Row(p, 0.0, RowTag("bus", i, "balance_p", ph)))
            rows.append(Row(q, 0.0, RowTag("bus", i, "balance_q", ph)))
    return rows


def _delta_coupling(l: str, idx: dict, tag_bus: str) -> list[Row]:
    def v(kind, ph):
        return idx[VariableKey(kind, l, ph)]

    h = 0.5 * SQRT3
    pattern = [
        ("delta_sum_p", [(v("p_bus_load", ph), 1.0) for ph in (1, 2, 3)] + [(v("p_load", ph), -1.0) for ph in (1, 2, 3)]),
        ("delta_sum_q", [(v("q_bus_load", ph), 1.0) for ph in (1, 2, 3)] + [(v("q_load", ph), -1.0) for ph in (1, 2, 3)]),
        ("delta_2p", [(v("p_bus_load", 2), 1.5), (v("q_bus_load", 2), -h),
                      (v("p_load", 2), -1.0), (v("p_load", 1), -0.5), (v("q_load", 1), h)]),
        ("delta_2q", [(v("p_bus_load", 2), h), (v("q_bus_load", 2), 1.5),
                      (v("p_load", 1), -h), (v("q_load", 1), -0.5), (v("q_load", 2), -1.0)]),
        ("delta_3p", [(v("q_bus_load", 2), SQRT3), (v("p_bus_load", 3), 1.5), (v("q_bus_load", 3), -h),
                      (v("p_load", 1), -0.5), (v("q_load", 1), -h), (v("p_load", 3), -1.0)]),
        ("delta_3q", [(v("p_bus_load", 2), -SQRT3), (v("p_bus_load", 3), h), (v("q_bus_load", 3), 1.5),
                      (v("p_load", 1), h), (v("q_load", 1), -0.5), (v("q_load", 3), -1.0)]),
    ]
    rows = []
    for family, entries in pattern:
        coefs: dict[int, float] = {}
        for col, val in entries:
            _add(coefs, col, val)
        rows.append(Row(coefs, 0.0, RowTag("bus", tag_bus, family)))
    return rows


def build_load_model(f: Feeder, var_table: Sequence[VariableKey]) -> list[Row]:
    idx = _index(var_table)
    rows = []
    for l in sorted(f.loads):
        load = f.loads[l]
        # effective load voltage: w for wye, 3w (line-to-line) for delta
        scale = 3.0 if load.connection == "delta" else 1.0
        for pos, ph in enumerate(load.phases):
            w = idx[VariableKey("w", load.bus, ph)]
            for kind, coef, expo in (("p", load.a[pos], load.alpha[pos]), ("q", load.b[pos], load.beta[pos])):
                coefs: dict[int, float] = {idx[VariableKey(f"{kind}_load", l, ph)]: 1.0}
                _add(coefs, w, -coef * expo / 2.0 * scale)
                rows.append(Row(coefs, coef * (1.0 - expo / 2.0), RowTag("bus", load.bus, f"load_{kind}", ph)))
        if load.connection == "wye":
            for ph in load.phases:
                for kind in ("p", "q"):
                    coefs = {idx[VariableKey(f"{kind}_bus_load", l, ph)]: 1.0,
                             idx[VariableKey(f"{kind}_load", l, ph)]: -1.0}
                    rows.append(Row(coefs, 0.0, RowTag("bus", load.bus, f"wye_{kind}", ph)))
        else:
            rows += _delta_coupling(l, idx, load.bus)
    return rows


# off-diagonal sign s in  Mp = r + s*sqrt3*x,  Mq = x - s*sqrt3*r
_M_SIGN = {(1, 2): -1.0, (2, 3): -1.0, (3, 1): -1.0, (1, 3): 1.0, (2, 1): 1.0, (3, 2): 1.0}


def build_m_matrices(line: LineSegment) -> tuple[np.ndarray, np.ndarray]:
    """Voltage-drop coupling matrices restricted to the line's phases."""
    r = np.asarray(line.r, dtype=float)
    x = np.asarray(line.x, dtype=float)
    n = len(line.phases)
    mp = np.empty((n, n))
    mq = np.empty((n, n))
    for a, pa in enumerate(line.phases):
        for b, pb in enumerate(line.phases):
            if a == b:
                mp[a, b] = -2.0 * r[a, b]
                mq[a, b] = -2.0 * x[a, b]
            else:
                s = _M_SIGN[pa, pb]
                mp[a, b] = r[a, b] + s * SQRT3 * x[a, b]
                mq[a, b] = x[a, b] - s * SQRT3 * r[a, b]
    return mp, mq


def build_flow_equations(f: Feeder, var_table: Sequence[VariableKey]) -> list[Row]:
    idx = _index(var_table)
    rows = []
    for e in sorted(f.lines):
        line = f.lines[e]
        i, j = line.from_bus, line.to_bus
        mp, mq = build_m_matrices(line)

        def flow(kind, ph, d):
            return idx[VariableKey(kind, e, ph, d)]

        for a, ph in enumerate(line.phases):
            wi, wj = idx[VariableKey("w", i, ph)], idx[VariableKey("w", j, ph)]
            p: dict[int, float] = {flow("p_flow", ph, "from_to"): 1.0, flow("p_flow", ph, "to_from"): 1.0}
            _add(p, wi, -line.g_s_from[a])
            _add(p, wj, -line.g_s_to[a])
            q: dict[int, float] = {flow("q_flow", ph, "from_to"): 1.0, flow("q_flow", ph, "to_from"): 1.0}
            _add(q, wi, line.b_s_from[a])
            _add(q, wj, line.b_s_to[a])

            drop: dict[int, float] = {}
            _add(drop, wi, 1.0)
            _add(drop, wj, -line.tau[a])
            for b, psi in enumerate(line.phases):
                wi_psi = idx[VariableKey("w", i, psi)]
                _add(drop, flow("p_flow", psi, "from_to"), mp[a, b])
                _add(drop, wi_psi, -mp[a, b] * line.g_s_from[b])
                _add(drop, flow("q_flow", psi, "from_to"), mq[a, b])
                _add(drop, wi_psi, mq[a, b] * line.b_s_from[b])
            rows.append(Row(p, 0.0, RowTag("line", e, "loss_p", ph)))
            rows.append(Row(q, 0.0, RowTag("line", e, "loss_q", ph)))
            rows.append(Row(drop, 0.0, RowTag("line", e, "drop", ph)))
    return rows


def _bounds(f: Feeder, var_table: Sequence[VariableKey]) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(len(var_table), -np.inf)
    hi = np.full(len(var_table), np.inf)
    for j, key in enumerate(var_table):
        if key.kind in ("p_gen", "q_gen"):
            gen = f.generators[key.owner]
            pos = gen.phases.index(key.phase)
            pair = (gen.p_lo, gen.p_hi) if key.kind == "p_gen" else (gen.q_lo, gen.q_hi)
        elif key.kind == "w":
            bus = f.buses[key.owner]
            pos = bus.phases.index(key.phase)
            pair = (bus.w_lo, bus.w_hi)
        elif key.kind in ("p_flow", "q_flow"):
            line = f.lines[key.owner]
            pos = line.phases.index(key.phase)
            pair = (line.p_lo, line.p_hi) if key.kind == "p_flow" else (line.q_lo, line.q_hi)
        else:
            continue
        lo[j], hi[j] = pair[0][pos], pair[1][pos]
    return lo, hi


def _col_owner(f: Feeder, key: VariableKey) -> tuple[str, str]:
    if key.kind in ("p_gen", "q_gen"):
        return "bus", f.generators[key.owner].bus
    if key.kind == "w":
        return "bus", key.owner
    if key.kind in ("p_flow", "q_flow"):
        return "line", key.owner
    return "bus", f.loads[key.owner].bus


def rows_to_system(rows: Sequence[Row], var_table, c, x_lo, x_hi, col_owners, feeder=None) -> LinearSystem:
    data, ri, ci = [], [], []
    for r, row in enumerate(rows):
        for col, val in sorted(row.coefs.items()):
            ri.append(r)
            ci.append(col)
            data.append(val)
    A = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), len(var_table)))
    b = np.array([row.rhs for row in rows], dtype=float)
    return LinearSystem(A, b, np.asarray(c, float), np.asarray(x_lo, float), np.asarray(x_hi, float),
                        list(var_table), [row.tag for row in rows], list(col_owners), feeder)


def assemble_centralized(f: Feeder) -> LinearSystem:
    var_table = index_variables(f)
    rows = build_power_balance(f, var_table) + build_load_model(f, var_table) + build_flow_equations(f, var_table)
    c = np.array([1.0 if key.kind == "p_gen" else 0.0 for key in var_table])
    lo, hi = _bounds(f, var_table)
    owners = [_col_owner(f, key) for key in var_table]
    return rows_to_system(rows, var_table, c, lo, hi, owners, f)


class FeederAssembler(TransformerMixin, BaseEstimator):
    """Turn a :class:`Feeder` into its centralized :class:`LinearSystem`.

    Parameters
    ----------
    validate : bool, default=True
        Run :func:`validate_feeder` first and raise
        :class:`FeederValidationError` on any error diagnostic.
    """

    def __init__(self, validate: bool = True):
        self.validate = validate

    def fit(self, X: Feeder, y=None):
        self._check(X)
        self.n_variables_ = len(index_variables(X))
        return self

    def transform(self, X: Feeder) -> LinearSystem:
        self._check(X)
        return assemble_centralized(X)

    def _check(self, X):
        if not isinstance(X, Feeder):
            raise TypeError(f"expected a Feeder, got {type(X).__name__}")
        if self.validate:
            diags = validate_feeder(X)
            if has_errors(diags):
                raise FeederValidationError(diags)
