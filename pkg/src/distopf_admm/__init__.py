"""Solver-free consensus ADMM for linearized multi-phase distribution OPF."""

from .admm import Settings, SolverFreeADMM, solve
from .decompose import ComponentDecomposer, DecomposedModel, build_component_graph, partition, row_reduce
from .feeder import Feeder, derive_load_coefficients, parse_feeder, read_feeder, serialize_feeder, validate_feeder
from .fixtures import load_fixture
from .lp import FeederAssembler, LinearSystem, VariableKey, assemble_centralized
from .oracle import check_feasibility, reconstruct_centralized, reference_solve

__all__ = [
    "ComponentDecomposer", "DecomposedModel", "Feeder", "FeederAssembler", "LinearSystem", "Settings",
    "SolverFreeADMM", "VariableKey", "assemble_centralized", "build_component_graph", "check_feasibility",
    "derive_load_coefficients", "load_fixture", "parse_feeder", "partition", "read_feeder", "reconstruct_centralized",
    "reference_solve", "row_reduce", "serialize_feeder", "solve", "validate_feeder",
]
