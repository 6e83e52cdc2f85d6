"""Network-DEA financial sustainability index and panel econometrics."""

from .exceptions import (ConfigError, ConsistencyError, DegenerateColumnError, DuplicateKeyError, EmptyResultError,
                         EstimationError, FsdeaError, MalmquistDomainError, ParseError, PositivityError, SchemaError,
                         SolverError, SpecError, SplitError)
from .lp import LinearProgram, LpSolution, solve, to_mps
from .malmquist import (FsiOptions, FsiResult, MalmquistFSI, MalmquistRecord, ScoreQuadruple, compute_fsi,
                        decompose, fsi_panel, malmquist, stage_malmquist)
from .netdea import (DeaOptions, EfficiencyRecord, NetworkDEA, NetworkSpec, StageSpec, assemble_lp,
                     bank_network_spec, evaluate, evaluate_period, records_frame)
from .panel import (Panel, ValidationReport, VariableDictionary, VariableEntry, default_dictionary, load_panel,
                    shift_normalize, validate_panel, write_panel)
from .synth import CounterRNG, DgpConfig, generate, write_synthetic

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConsistencyError", "CounterRNG", "DeaOptions", "DegenerateColumnError", "DgpConfig",
    "DuplicateKeyError", "EfficiencyRecord", "EmptyResultError", "EstimationError", "FsdeaError", "FsiOptions",
    "FsiResult", "LinearProgram", "LpSolution", "MalmquistDomainError", "MalmquistFSI", "MalmquistRecord",
    "NetworkDEA", "NetworkSpec", "Panel", "ParseError", "PositivityError", "SchemaError", "ScoreQuadruple",
    "SolverError", "SpecError", "SplitError", "StageSpec", "ValidationReport", "VariableDictionary",
    "VariableEntry", "assemble_lp", "bank_network_spec", "compute_fsi", "decompose", "default_dictionary",
    "evaluate", "evaluate_period", "fsi_panel", "generate", "load_panel", "malmquist", "records_frame",
    "shift_normalize", "solve", "stage_malmquist", "to_mps", "validate_panel", "write_panel", "write_synthetic",
]
