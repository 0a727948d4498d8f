"""Leak-prone population protocols: simulation, analysis, and experiments."""

from .model import (
    CatalyticPartition,
    Output,
    Protocol,
    ProtocolError,
    Reaction,
    Species,
    classify_catalytic,
    make_protocol,
)
from .dsl import ParseError, parse, serialize
from .robust_detect import (
    DetectParams,
    build_robust_detect,
    build_truncated_ideal,
    initial_configuration,
)
from .simulate import (
    BatchResult,
    Configuration,
    Event,
    EventKind,
    LeakModel,
    SimParams,
    Strategy,
    Trajectory,
    empirical_occupancy,
    individual_occupancy,
    run,
    run_batch,
    run_coupled_min_triple,
    sample_output,
    set_d_count,
    step,
)
from .analysis import (
    AnalysisError,
    ExactChain,
    StationaryProfile,
    TheoremBounds,
    detect_probability,
    exact_stationary_small,
    stationary_false_negative,
    stationary_false_positive,
    stationary_no_leak,
    stationary_profile,
    theorem_bounds,
    total_variation,
)
from .convergence import (
    ConvergenceReport,
    DecayReport,
    DetectorPresentWarning,
    DistanceReport,
    StabilizationReport,
    clearing_time_bound,
    decay_experiment,
    estimate_convergence_time,
    pair_potential_contraction,
    potential,
    stabilization_experiment,
    tv_distance,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
