"""Run contract measurement protocols against zoo kernels."""

from .core import (
    DEFAULT_BUDGET,
    CalibrationVerdict,
    ConformanceReport,
    SampleResult,
    UnsupportedProtocol,
    companion_tolerance,
    contract_version,
    eval_tolerance_expr,
    in_scope,
    instantiate,
    match_violation_signature,
    packaged_contracts,
    run_protocol,
    scope_covers,
    shape_sweep,
    three_state_calibrate,
)
from .generators import STRATEGIES, InputGenerator, boundary_indices, sample_rng
from .references import AlgebraicCheck, OracleUnavailable, UnsupportedReference, resolve_reference

__all__ = [
    "DEFAULT_BUDGET", "CalibrationVerdict", "ConformanceReport", "SampleResult", "UnsupportedProtocol",
    "OracleUnavailable", "UnsupportedReference", "AlgebraicCheck", "InputGenerator", "STRATEGIES",
    "boundary_indices", "sample_rng", "companion_tolerance", "contract_version", "eval_tolerance_expr",
    "in_scope", "instantiate", "match_violation_signature", "packaged_contracts", "resolve_reference",
    "run_protocol", "scope_covers", "shape_sweep", "three_state_calibrate",
]
