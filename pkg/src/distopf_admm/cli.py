"""Command-line front end: ``solve``, ``validate``, ``inspect`` and ``selfcheck``.

Reports are JSON.  Exit codes are stable and listed in ``EXIT_CODES``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .admm import DEFAULT_EPS_REL, DEFAULT_MAX_ITER, DEFAULT_RHO, Settings, precompute, solve, write_trace_csv
from .decompose import build_component_graph, partition, reduce_model
from .exceptions import (
    FeederSchemaError, FeederSyntaxError, InfeasibleSubsystemError, OracleSizeError, SubsystemError,
)
from .feeder import has_errors, parse_feeder, validate_feeder
from .lp import assemble_centralized
from .oracle import check_feasibility, reconstruct_centralized, reference_solve
from .parallel import default_workers

EXIT_OK = 0
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_INVALID = 5
EXIT_INFEASIBLE_SUBSYSTEM = 6
EXIT_ITERATION_LIMIT = 7
EXIT_RUNTIME = 8

EXIT_CODES = {
    "ok": EXIT_OK,
    "io": EXIT_IO,
    "parse": EXIT_PARSE,
    "validation": EXIT_INVALID,
    "infeasible_subsystem": EXIT_INFEASIBLE_SUBSYSTEM,
    "iteration_limit": EXIT_ITERATION_LIMIT,
    "runtime": EXIT_RUNTIME,
}


@dataclass
class RunConfig:
    input: str
    rho: float = DEFAULT_RHO
    eps_rel: float = DEFAULT_EPS_REL
    max_iter: int = DEFAULT_MAX_ITER
    workers: int = 1
    trace: str | None = None
    report: str | None = None
    oracle: bool = False
    solution: str | None = None
    dump_lp: str | None = None
    dump_subsystems: str | None = None
    seed: int = 0
    trials: int = 100


class _Abort(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _err(msg: str) -> None:
    print(f"distopf-admm: {msg}", file=sys.stderr)


def _load(config: RunConfig):
    path = Path(config.input)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise _Abort(EXIT_IO, f"cannot read input file {str(path)!r}: {exc.strerror or exc}") from None
    try:
        return parse_feeder(text)
    except (FeederSyntaxError, FeederSchemaError) as exc:
        raise _Abort(EXIT_PARSE, f"{path}: {exc}") from None


def _load_valid(config: RunConfig):
    feeder = _load(config)
    diags = validate_feeder(feeder)
    if has_errors(diags):
        for d in diags:
            _err(str(d))
        raise _Abort(EXIT_INVALID, f"{config.input}: feeder failed validation")
    return feeder


def _emit(report: dict, path: str | None) -> None:
    text = json.dumps(report, indent=2, default=float)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_solve(config: RunConfig) -> int:
    timing = {}
    t0 = time.perf_counter()
    feeder = _load_valid(config)
    system = assemble_centralized(feeder)
    timing["assemble"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    settings = Settings(rho=config.rho, eps_rel=config.eps_rel, max_iter=config.max_iter, workers=config.workers)
    model = reduce_model(partition(system, build_component_graph(feeder)), workers=config.workers)
    timing["decompose"] = time.perf_counter() - t0
    if config.dump_lp:
        system.dump_triplets(config.dump_lp)
    if config.dump_subsystems:
        Path(config.dump_subsystems).write_text(json.dumps(model.describe(), indent=1) + "\n", encoding="utf-8")

    result = solve(model, settings)
    timing.update(result.timings)
    if config.trace:
        write_trace_csv(result.trace, config.trace)

    x_final = reconstruct_centralized(result.x, result.z, model)
    feas = check_feasibility(system, x_final)
    last = result.trace[-1]
    report = {
        "command": "solve",
        "input": config.input,
        "status": result.status,
        "iterations": result.n_iter,
        "objective": result.objective,
        "final_residuals": {"pres": last.pres, "dres": last.dres, "eps_prim": last.eps_prim, "eps_dual": last.eps_dual},
        "settings": asdict(settings),
        "dimensions": {"rows": system.shape[0], "columns": system.shape[1], "subsystems": model.S},
        "timing": timing,
        "reconstructed": feas.as_dict(),
    }
    _emit(report, config.report)
    if config.solution:
        table = {str(k): v for k, v in zip(system.var_table, x_final.tolist())}
        Path(config.solution).write_text(json.dumps(table, indent=1) + "\n", encoding="utf-8")
    if config.report:
        print(f"{result.status} after {result.n_iter} iterations, objective {result.objective:.8g}")
    return EXIT_OK if result.status == "converged" else EXIT_ITERATION_LIMIT


def cmd_validate(config: RunConfig) -> int:
    feeder = _load(config)
    diags = validate_feeder(feeder)
    report = {
        "command": "validate",
        "input": config.input,
        "valid": not has_errors(diags),
        "diagnostics": [{"severity": d.severity, "path": d.path, "message": d.message} for d in diags],
    }
    if config.oracle and report["valid"]:
        system = assemble_centralized(feeder)
        try:
            res = reference_solve(system)
        except OracleSizeError as exc:
            report["oracle"] = {"status": "skipped", "reason": str(exc)}
        else:
            report["oracle"] = {"status": res.status, "objective": res.objective, "kkt_residual": res.kkt_residual}
            if res.x is not None:
                report["oracle"]["feasibility"] = check_feasibility(system, res.x).as_dict()
    _emit(report, config.report)
    return EXIT_OK if report["valid"] else EXIT_INVALID


def cmd_inspect(config: RunConfig) -> int:
    feeder = _load_valid(config)
    system = assemble_centralized(feeder)
    comps = build_component_graph(feeder)
    leaves = [i for i, d in feeder.graph().degree() if d == 1]
    pre = partition(system, comps)
    post = reduce_model(pre, workers=config.workers)
    report = {
        "command": "inspect",
        "input": config.input,
        "A": {"rows": system.shape[0], "columns": system.shape[1], "nonzeros": int(system.A.nnz)},
        "graph": {"nodes": len(feeder.buses), "lines": len(feeder.lines), "leaves": len(leaves),
                  "merged_leaves": sum(c.kind == "merged_leaf" for c in comps)},
        "S": len(comps),
        "subsystems_pre_reduction": pre.stats(),
        "subsystems": post.stats(),
    }
    _emit(report, config.report)
    return EXIT_OK


def cmd_selfcheck(config: RunConfig) -> int:
    """Randomized projector-algebra check on full-row-rank matrices."""
    from .decompose import DecomposedModel, Subsystem

    rng = np.random.default_rng(config.seed)
    worst = 0.0
    for _ in range(config.trials):
        m = int(rng.integers(1, 11))
        n = int(rng.integers(m, 21))
        A = rng.standard_normal((m, n))
        b = rng.standard_normal(m)
        sub = Subsystem(0, "random", A, b, np.arange(n), np.arange(m))
        model = DecomposedModel([sub], np.zeros(n), np.full(n, -np.inf), np.full(n, np.inf), np.ones(n, int))
        op = precompute(model)
        Ab, bb = op.Abar[0], op.bbar[0]
        worst = max(worst, np.abs(Ab @ Ab + Ab).max(), np.abs(A @ Ab).max(), np.abs(A @ bb - b).max())
    report = {"command": "selfcheck", "seed": config.seed, "trials": config.trials, "max_violation": worst,
              "passed": bool(worst <= 1e-9)}
    _emit(report, config.report)
    return EXIT_OK if report["passed"] else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distopf-admm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", "-i", required=True, help="feeder document (JSON)")
        p.add_argument("--report", help="write the JSON report here instead of stdout")
        p.add_argument("--workers", type=int, default=None, help="worker threads (default: all CPUs)")

    p = sub.add_parser("solve", help="run the solver-free ADMM")
    common(p)
    p.add_argument("--rho", type=float, default=DEFAULT_RHO)
    p.add_argument("--eps-rel", type=float, default=DEFAULT_EPS_REL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--trace", help="per-iteration residual CSV")
    p.add_argument("--solution", help="final solution keyed by variable (JSON)")
    p.add_argument("--dump-lp", help="sparse triplet dump of the centralized LP")
    p.add_argument("--dump-subsystems", help="per-subsystem dimensions and maps (JSON)")

    p = sub.add_parser("validate", help="check a feeder document")
    common(p)
    p.add_argument("--oracle", action="store_true", help="also solve the LP with the exact reference solver")

    p = sub.add_parser("inspect", help="report LP and subsystem dimensions")
    common(p)

    p = sub.add_parser("selfcheck", help="randomized projector-algebra check")
    common(p, needs_input=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    return parser


COMMANDS = {"solve": cmd_solve, "validate": cmd_validate, "inspect": cmd_inspect, "selfcheck": cmd_selfcheck}


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    if args.get("workers") is None:
        args["workers"] = default_workers()
    args.setdefault("input", "")
    config = RunConfig(**args)
    try:
        if config.workers < 1:
            raise _Abort(EXIT_RUNTIME, f"--workers must be >= 1, got {config.workers}")
        return COMMANDS[command](config)
    except _Abort as exc:
        _err(str(exc))
        return exc.code
    except InfeasibleSubsystemError as exc:
        _err(str(exc))
        return EXIT_INFEASIBLE_SUBSYSTEM
    except SubsystemError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    except ValueError as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
