"""Impulsive-forcing laboratory for the shifted Lorenz flow.

Simulates the Lorenz field re-randomized at Poincaré-section crossings,
extracts return and quotient interval maps, and verifies stability of
the invariant measures through transfer-operator discretization,
measure-distance sweeps, and renewal-theory estimators.
"""
from .errors import (
    CalibrationError,
    ConfigError,
    ConvergenceError,
    DegenerateEquilibriumError,
    DivergenceError,
    DomainError,
    ImpulseLorenzError,
    InvalidPerturbationError,
    OrbitCapturedError,
    OutOfFoliationError,
    StiffnessError,
    UnreliableFitError,
)
from .flow_integrator import (
    CrossingEvent,
    IntegratorConfig,
    first_crossing,
    integrate,
    return_map,
    sample_states,
)
from .noise_driver import (
    NoiseFamily,
    NoiseSpec,
    NoiseStream,
    draw_block,
    law_cdf,
    omega_metric,
)
from .pdmp import (
    BUILTIN_OBSERVABLES,
    EmpiricalCdf,
    PathSegment,
    PdmpPath,
    RenewalEstimate,
    RenewalStats,
    collect_renewal_stats,
    drift_constants,
    empirical_return_cdf,
    export_path_csv,
    path_summary,
    renewal_stationary,
    segment_integrals,
    simulate_pdmp,
    step_chain,
    time_average,
)
from .sections import (
    CasimirCalibration,
    SectionKind,
    SectionPoint,
    SectionSpec,
    build_section,
    chart,
    in_clip_square,
    leaf_point,
    membership,
    quotient_project,
    section_from_dict,
    section_to_dict,
    signed_distance,
    symmetry_apply,
    to_ambient,
    to_chart,
)
from .vector_fields import (
    LorenzParams,
    Perturbation,
    PerturbationMode,
    casimir,
    casimir_bound,
    eval_field,
    jacobian,
)

__version__ = "0.1.0"
