"""Feeder data model: parsing, serialization and validation.

A feeder document is JSON with top-level keys ``base``, ``buses``,
``generators``, ``lines`` and ``loads``.  All quantities are per-unit on the
single system base declared in ``base``; per-phase arrays follow the order of
the component's ``phases`` list and matrices are nested row-major lists.
The JSON schema ships as ``distopf_admm/data/feeder.schema.json``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Literal, NamedTuple

import jsonschema
import networkx as nx

from .exceptions import FeederSchemaError, FeederSyntaxError

Phases = tuple[int, ...]
Vec = tuple[float, ...]
Mat = tuple[tuple[float, ...], ...]

LOAD_EXPONENTS = {"constant_power": 0.0, "constant_current": 1.0, "constant_impedance": 2.0}


@dataclass(frozen=True)
class Bus:
    id: str
    phases: Phases
    w_lo: Vec
    w_hi: Vec
    g_sh: Vec
    b_sh: Vec


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    phases: Phases
    p_lo: Vec
    p_hi: Vec
    q_lo: Vec
    q_hi: Vec


@dataclass(frozen=True)
class LineSegment:
    """Branch or transformer between two buses.

    ``r`` and ``x`` are ``len(phases)`` square matrices indexed by position in
    ``phases``.  Transformers are lines with ``tau != 1``.  The flow bounds
    apply to both directions of flow.
    """

    id: str
    from_bus: str
    to_bus: str
    phases: Phases
    r: Mat
    x: Mat
    g_s_from: Vec
    b_s_from: Vec
    g_s_to: Vec
    b_s_to: Vec
    tau: Vec
    p_lo: Vec
    p_hi: Vec
    q_lo: Vec
    q_hi: Vec


@dataclass(frozen=True)
class Load:
    id: str
    bus: str
    connection: Literal["wye", "delta"]
    phases: Phases
    a: Vec
    b: Vec
    alpha: Vec
    beta: Vec


@dataclass(frozen=True)
class Feeder:
    buses: dict[str, Bus]
    generators: dict[str, Generator]
    lines: dict[str, LineSegment]
    loads: dict[str, Load]
    base_mva: float = 1.0
    base_kv: float = 1.0
    name: str = ""

    def graph(self) -> nx.MultiGraph:
        """Bus-line multigraph; edge keys are line ids."""
        g = nx.MultiGraph()
        g.add_nodes_from(self.buses)
        for line in self.lines.values():
            g.add_edge(line.from_bus, line.to_bus, key=line.id)
        return g


@dataclass(frozen=True)
class Diagnostic:
    severity: Literal["error", "warning"]
    path: str
    message: str

    def __str__(self):
        return f"{self.severity}: {self.path}: {self.message}"


class LoadCoefficients(NamedTuple):
    a: float
    b: float
    alpha: float
    beta: float


def derive_load_coefficients(p_ref: float, q_ref: float, kind: str) -> LoadCoefficients:
    """Coefficients of the linearized voltage-dependent load model.

    ``kind`` is one of ``constant_power``, ``constant_current`` or
    ``constant_impedance`` (exponent 0, 1 and 2 respectively).
    """
    try:
        exponent = LOAD_EXPONENTS[kind]
    except KeyError:
        raise ValueError(f"unknown load kind {kind!r}; expected one of {sorted(LOAD_EXPONENTS)}") from None
    return LoadCoefficients(float(p_ref), float(q_ref), exponent, exponent)


def linearized_load(coef: float, exponent: float, w_hat: float) -> float:
    """Consumption ``coef * w_hat**(exponent/2)`` linearized around ``w_hat = 1``."""
    return coef * exponent / 2.0 * (w_hat - 1.0) + coef


# -- parsing -----------------------------------------------------------------

def _schema() -> dict:
    text = resources.files(__package__).joinpath("data/feeder.schema.json").read_text()
    return json.loads(text)


def _json_path(parts: Iterable) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _vec(values, n: int, default: float) -> Vec:
    if values is None:
        return (default,) * n
    return tuple(float(v) for v in values)


def _bound(values, n: int, sign: float) -> Vec:
    inf = sign * math.inf
    if values is None:
        return (inf,) * n
    return tuple(inf if v is None else float(v) for v in values)


def _keyed(items: list, what: str) -> dict:
    out = {}
    for k, item in enumerate(items):
        if item.id in out:
            raise FeederSchemaError(f"{what}[{k}].id", f"duplicate id {item.id!r}")
        out[item.id] = item
    return out


def parse_feeder(text: str) -> Feeder:
    """Parse a feeder document.

    Raises
    ------
    FeederSyntaxError
        Malformed JSON; carries line and column.
    FeederSchemaError
        Schema violation, duplicate id or dangling reference; carries the
        offending field path.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FeederSyntaxError(exc.msg, exc.lineno, exc.colno) from None

    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise FeederSchemaError(_json_path(err.absolute_path), err.message)

    buses = []
    for raw in doc["buses"]:
        n = len(raw["phases"])
        buses.append(Bus(
            id=raw["id"],
            phases=tuple(raw["phases"]),
            w_lo=_vec(raw["w_lo"], n, 0.0),
            w_hi=_vec(raw["w_hi"], n, 0.0),
            g_sh=_vec(raw.get("g_sh"), n, 0.0),
            b_sh=_vec(raw.get("b_sh"), n, 0.0),
        ))
    gens = [
        Generator(
            id=raw["id"], bus=raw["bus"], phases=tuple(raw["phases"]),
            p_lo=_vec(raw["p_lo"], 0, 0.0), p_hi=_vec(raw["p_hi"], 0, 0.0),
            q_lo=_vec(raw["q_lo"], 0, 0.0), q_hi=_vec(raw["q_hi"], 0, 0.0),
        )
        for raw in doc["generators"]
    ]
    lines = []
    for raw in doc["lines"]:
        n = len(raw["phases"])
        lines.append(LineSegment(
            id=raw["id"], from_bus=raw["from_bus"], to_bus=raw["to_bus"],
            phases=tuple(raw["phases"]),
            r=tuple(tuple(float(v) for v in row) for row in raw["r"]),
            x=tuple(tuple(float(v) for v in row) for row in raw["x"]),
            g_s_from=_vec(raw.get("g_s_from"), n, 0.0),
            b_s_from=_vec(raw.get("b_s_from"), n, 0.0),
            g_s_to=_vec(raw.get("g_s_to"), n, 0.0),
            b_s_to=_vec(raw.get("b_s_to"), n, 0.0),
            tau=_vec(raw.get("tau"), n, 1.0),
            p_lo=_bound(raw.get("p_lo"), n, -1.0),
            p_hi=_bound(raw.get("p_hi"), n, 1.0),
            q_lo=_bound(raw.get("q_lo"), n, -1.0),
            q_hi=_bound(raw.get("q_hi"), n, 1.0),
        ))
    loads = [
        Load(
            id=raw["id"], bus=raw["bus"], connection=raw["connection"],
            phases=tuple(raw["phases"]),
            a=_vec(raw["a"], 0, 0.0), b=_vec(raw["b"], 0, 0.0),
            alpha=_vec(raw["alpha"], 0, 0.0), beta=_vec(raw["beta"], 0, 0.0),
        )
        for raw in doc["loads"]
    ]

    feeder = Feeder(
        buses=_keyed(buses, "buses"),
        generators=_keyed(gens, "generators"),
        lines=_keyed(lines, "lines"),
        loads=_keyed(loads, "loads"),
        base_mva=float(doc["base"]["mva"]),
        base_kv=float(doc["base"]["kv"]),
        name=doc.get("name", ""),
    )
    for kind, items, attrs in (
        ("generators", gens, ("bus",)),
        ("loads", loads, ("bus",)),
        ("lines", lines, ("from_bus", "to_bus")),
    ):
        for k, item in enumerate(items):
            for attr in attrs:
                ref = getattr(item, attr)
                if ref not in feeder.buses:
                    raise FeederSchemaError(f"{kind}[{k}].{attr}", f"unknown bus {ref!r}")
    return feeder


def read_feeder(path) -> Feeder:
    with open(path, encoding="utf-8") as fh:
        return parse_feeder(fh.read())


def _out(values: Vec) -> list:
    return [None if math.isinf(v) else v for v in values]


def feeder_to_dict(feeder: Feeder) -> dict:
    doc = {}
    if feeder.name:
        doc["name"] = feeder.name
    doc["base"] = {"mva": feeder.base_mva, "kv": feeder.base_kv}
    doc["buses"] = [
        {"id": b.id, "phases": list(b.phases), "w_lo": list(b.w_lo), "w_hi": list(b.w_hi),
         "g_sh": list(b.g_sh), "b_sh": list(b.b_sh)}
        for b in feeder.buses.values()
    ]
    doc["generators"] = [
        {"id": g.id, "bus": g.bus, "phases": list(g.phases), "p_lo": list(g.p_lo),
         "p_hi": list(g.p_hi), "q_lo": list(g.q_lo), "q_hi": list(g.q_hi)}
        for g in feeder.generators.values()
    ]
    doc["lines"] = [
        {"id": e.id, "from_bus": e.from_bus, "to_bus": e.to_bus, "phases": list(e.phases),
         "r": [list(row) for row in e.r], "x": [list(row) for row in e.x],
         "g_s_from": list(e.g_s_from), "b_s_from": list(e.b_s_from),
         "g_s_to": list(e.g_s_to), "b_s_to": list(e.b_s_to), "tau": list(e.tau),
         "p_lo": _out(e.p_lo), "p_hi": _out(e.p_hi), "q_lo": _out(e.q_lo), "q_hi": _out(e.q_hi)}
        for e in feeder.lines.values()
    ]
    doc["loads"] = [
        {"id": l.id, "bus": l.bus, "connection": l.connection, "phases": list(l.phases),
         "a": list(l.a), "b": list(l.b), "alpha": list(l.alpha), "beta": list(l.beta)}
        for l in feeder.loads.values()
    ]
    return doc


def serialize_feeder(feeder: Feeder) -> str:
    return json.dumps(feeder_to_dict(feeder), indent=2)


# -- validation --------------------------------------------------------------

@dataclass
class _Collector:
    items: list[Diagnostic] = field(default_factory=list)

    def error(self, path: str, message: str) -> None:
        self.items.append(Diagnostic("error", path, message))


def _check_phases(diag: _Collector, path: str, phases: Phases) -> bool:
    if not phases:
        diag.error(path, "phase set is empty")
        return False
    if any(p not in (1, 2, 3) for p in phases):
        diag.error(path, f"phases {list(phases)} not a subset of {{1,2,3}}")
        return False
    if len(set(phases)) != len(phases):
        diag.error(path, f"duplicate phases in {list(phases)}")
        return False
    if list(phases) != sorted(phases):
        diag.error(path, f"phases {list(phases)} not in ascending order")
        return False
    return True


def _check_lengths(diag: _Collector, path: str, obj, n: int, names: Iterable[str]) -> bool:
    ok = True
    for name in names:
        if len(getattr(obj, name)) != n:
            diag.error(f"{path}.{name}", f"expected {n} per-phase values, got {len(getattr(obj, name))}")
            ok = False
    return ok


def _check_order(diag: _Collector, path: str, lo: Vec, hi: Vec, lo_name: str, hi_name: str) -> None:
    for k, (a, b) in enumerate(zip(lo, hi)):
        if not a <= b:
            diag.error(f"{path}.{lo_name}[{k}]", f"{lo_name}={a} exceeds {hi_name}={b}")


def _subset(diag: _Collector, path: str, phases: Phases, parent: Phases, parent_name: str) -> None:
    extra = sorted(set(phases) - set(parent))
    if extra:
        diag.error(path, f"phases {extra} not present on {parent_name} (phases {list(parent)})")


def _finite(diag: _Collector, path: str, obj, names: Iterable[str]) -> None:
    for name in names:
        if not all(math.isfinite(v) for v in getattr(obj, name)):
            diag.error(f"{path}.{name}", "non-finite value")


def validate_feeder(feeder: Feeder) -> list[Diagnostic]:
    """Check every model invariant; an empty list means the feeder is valid."""
    diag = _Collector()

    for i, bus in feeder.buses.items():
        path = f"buses[{i}]"
        n = len(bus.phases)
        if _check_phases(diag, f"{path}.phases", bus.phases) and _check_lengths(
            diag, path, bus, n, ("w_lo", "w_hi", "g_sh", "b_sh")
        ):
            _finite(diag, path, bus, ("w_lo", "w_hi", "g_sh", "b_sh"))
            _check_order(diag, path, bus.w_lo, bus.w_hi, "w_lo", "w_hi")
            for k, v in enumerate(bus.w_lo):
                if v < 0:
                    diag.error(f"{path}.w_lo[{k}]", f"squared voltage bound {v} is negative")

    for k, gen in feeder.generators.items():
        path = f"generators[{k}]"
        if gen.bus not in feeder.buses:
            diag.error(f"{path}.bus", f"unknown bus {gen.bus!r}")
            continue
        n = len(gen.phases)
        if _check_phases(diag, f"{path}.phases", gen.phases):
            _subset(diag, f"{path}.phases", gen.phases, feeder.buses[gen.bus].phases, f"bus {gen.bus!r}")
            if _check_lengths(diag, path, gen, n, ("p_lo", "p_hi", "q_lo", "q_hi")):
                _finite(diag, path, gen, ("p_lo", "p_hi", "q_lo", "q_hi"))
                _check_order(diag, path, gen.p_lo, gen.p_hi, "p_lo", "p_hi")
                _check_order(diag, path, gen.q_lo, gen.q_hi, "q_lo", "q_hi")

    for e, line in feeder.lines.items():
        path = f"lines[{e}]"
        missing = [b for b in (line.from_bus, line.to_bus) if b not in feeder.buses]
        if missing:
            diag.error(path, f"unknown bus {missing[0]!r}")
            continue
        if line.from_bus == line.to_bus:
            diag.error(path, "line connects a bus to itself")
        n = len(line.phases)
        if not _check_phases(diag, f"{path}.phases", line.phases):
            continue
        for end in (line.from_bus, line.to_bus):
            _subset(diag, f"{path}.phases", line.phases, feeder.buses[end].phases, f"bus {end!r}")
        for name in ("r", "x"):
            mat = getattr(line, name)
            if len(mat) != n or any(len(row) != n for row in mat):
                diag.error(f"{path}.{name}", f"expected a {n}x{n} matrix")
                continue
            if not all(math.isfinite(v) for row in mat for v in row):
                diag.error(f"{path}.{name}", "non-finite value")
            for a in range(n):
                for b in range(a + 1, n):
                    if mat[a][b] != mat[b][a]:
                        diag.error(f"{path}.{name}", f"matrix not symmetric at ({a},{b})")
        names = ("g_s_from", "b_s_from", "g_s_to", "b_s_to", "tau", "p_lo", "p_hi", "q_lo", "q_hi")
        if _check_lengths(diag, path, line, n, names):
            _finite(diag, path, line, ("g_s_from", "b_s_from", "g_s_to", "b_s_to", "tau"))
            for k, t in enumerate(line.tau):
                if not t > 0:
                    diag.error(f"{path}.tau[{k}]", f"tap ratio {t} must be positive")
            _check_order(diag, path, line.p_lo, line.p_hi, "p_lo", "p_hi")
            _check_order(diag, path, line.q_lo, line.q_hi, "q_lo", "q_hi")

    for l, load in feeder.loads.items():
        path = f"loads[{l}]"
        if load.bus not in feeder.buses:
            diag.error(f"{path}.bus", f"unknown bus {load.bus!r}")
            continue
        if not _check_phases(diag, f"{path}.phases", load.phases):
            continue
        _subset(diag, f"{path}.phases", load.phases, feeder.buses[load.bus].phases, f"bus {load.bus!r}")
        if load.connection == "delta" and load.phases != (1, 2, 3):
            diag.error(f"{path}.phases", "delta loads must attach to all three phases")
        if _check_lengths(diag, path, load, len(load.phases), ("a", "b", "alpha", "beta")):
            _finite(diag, path, load, ("a", "b", "alpha", "beta"))
            for name in ("alpha", "beta"):
                for k, v in enumerate(getattr(load, name)):
                    if v < 0:
                        diag.error(f"{path}.{name}[{k}]", f"exponent {v} must be nonnegative")

    if not feeder.generators:
        diag.error("generators", "feeder has no generator")
    if feeder.buses and not nx.is_connected(feeder.graph()):
        parts = sorted(sorted(c) for c in nx.connected_components(feeder.graph()))
        diag.error("lines", f"bus-line graph is disconnected: {len(parts)} components {parts}")
    if not feeder.buses:
        diag.error("buses", "feeder has no bus")
    return diag.items


def has_errors(diagnostics: Iterable[Diagnostic]) -> bool:
    return any(d.severity == "error" for d in diagnostics)
