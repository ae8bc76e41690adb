"""Simulation and analysis toolkit for heralded three-photon GHZ states from a trapped-ion factory node."""

from .estimation import (
    AnalysisReport,
    AnalysisResult,
    Estimate,
    FitResult,
    ParityCurve,
    ParityCurveFit,
    WitnessAnalyzer,
    WitnessReport,
    analyze_tables,
    estimate_beta,
    exact_parity,
    fidelity_from_parity,
    fit_parity,
    logical_probabilities,
    parity,
    propagate_errors,
    witness_lower_bound,
)
from .gme import Bipartition, flag_gme, max_biseparable_fidelity, max_schmidt_sq
from .optics import STANDARD_SETTINGS, DetectorModel, MeasurementSetting, port_distribution
from .protocol import (
    OUTCOME_TO_LABEL,
    ConditionalStateSet,
    GhzLabel,
    IonOutcome,
    ghz_projection_table,
    make_bell,
    make_werner,
    rsp_correction,
)
from .quantum import DensityMatrix, Ket, UnitaryOp, fidelity, partial_trace, tensor
from .rates import (
    LinkModel,
    expected_attempts_direct,
    expected_attempts_factory,
    expected_attempts_sequential,
    simulate_rates,
)
from .timetags import CountTable, extract_coincidences, parse_stream, synthesize_stream

__version__ = "0.1.0"
