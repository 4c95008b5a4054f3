"""Spectral gaps, adaptive tests and simulated verification of W and Dicke states."""

from .converter import ConversionResult, convert_strategy, merge_branches, nonadaptive_procedures
from .errors import DomainError, NumericError, TooLargeError
from .hilbert import BasisState, Ket, WeightSector, dicke_state, inner, normalize, w_state
from .measurement import (
    AdaptiveTest,
    TestOperator,
    dicke_adaptive_test,
    dicke_nonadaptive_tests,
    execute_branch_procedure,
    pair_projector,
    pauli_projector,
    w_adaptive_test,
    w_nonadaptive_tests,
)
from .simulator import NoisyInput, SimulationReport, fit_inverse_gap, run_protocol_once, simulate, worst_case_noise
from .spectral import (
    SpectralReport,
    assemble_dicke_strategy,
    assemble_w_strategy,
    build_strategy,
    closed_form_gap,
    required_tests,
    spectral_gap,
)
from .strategy import Strategy

__version__ = "0.1.0"

__all__ = [
    "AdaptiveTest", "BasisState", "ConversionResult", "DomainError", "Ket", "NoisyInput", "NumericError",
    "SimulationReport", "SpectralReport", "Strategy", "TestOperator", "TooLargeError", "WeightSector",
    "assemble_dicke_strategy", "assemble_w_strategy", "build_strategy", "closed_form_gap", "convert_strategy",
    "dicke_adaptive_test", "dicke_nonadaptive_tests", "dicke_state", "execute_branch_procedure",
    "fit_inverse_gap", "inner", "merge_branches", "nonadaptive_procedures", "normalize", "pair_projector",
    "pauli_projector", "required_tests", "run_protocol_once", "simulate", "spectral_gap", "w_adaptive_test",
    "w_nonadaptive_tests", "w_state", "worst_case_noise",
]
