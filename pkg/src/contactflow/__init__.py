"""Piecewise affine contact suspension flows and their spectral diagnostics.

The package is organized around one object, the suspension flow over a
piecewise affine symplectic torus map with a compatible quadratic roof, and
the measurements the accompanying experiments need: contact charts, cone
field hyperbolicity certificates, resolvent and Ulam discretizations of the
transfer semigroup, anisotropic norm checks, and leafwise averaging with
oscillatory-cancellation sweeps.  ``contactflow.cli`` ties the experiments
together behind a config-driven runner.
"""

from contactflow.errors import (
    ArrangementDegeneracy,
    ChartBoundary,
    ClosednessViolation,
    ConeNotInvariant,
    ConfigError,
    ContactFlowError,
    DegenerateFrame,
    EmptyCell,
    HypothesisViolation,
    NoiseFloor,
    NonFinite,
    NotInKernel,
    PathDependence,
    PieceExplosion,
    SupportEscape,
    ToleranceNotMet,
)
from contactflow.geometry import (
    ContactChart,
    ContactForm3,
    check_contact_chart,
    compose_charts,
    contact_translation,
    eval_alpha,
    identity_chart,
    leaf_straightening,
    linear_contact_chart,
    reeb_chart_at,
)
from contactflow.flow import (
    FlowDiag,
    FlowPoint,
    FlowPointBatch,
    PiecewiseAffineTorusMap,
    RoofFunction,
    SuspensionFlow,
    build_perturbed_map,
    build_roof,
    flow_backward,
    flow_forward,
    return_map,
    sample_invariant,
    single_piece_map,
    standard_flow,
    standard_map,
)
from contactflow.hyperbolicity import (
    Cone2,
    ConeField3,
    ComplexityReport,
    HyperbolicityParams,
    check_bunching,
    check_cone_invariance,
    check_transversality,
    complexity_counts,
    default_params,
    expansion_constants,
)
from contactflow.transfer import (
    CorrelationSeries,
    DecayFit,
    Observable,
    ResolventParams,
    ResolventValue,
    UlamModel,
    constant_observable,
    correlation,
    fit_decay,
    flow_box_bump,
    resolvent_apply,
    resolvent_observable,
    resolvent_power,
    resolvent_power_detailed,
    transfer_apply,
    ulam_build,
    verify_lipschitz,
    write_resolvent_csv,
)
from contactflow.aniso import (
    AnisoSymbol,
    CubeBump,
    GridFunction3,
    HalfSpace,
    HyperbolicBlockMap,
    aniso_norm_p2,
    check_composition_contraction,
    check_multiplier_charfun,
    check_symbol_inequality,
    composition_iteration_sweep,
    multiplier_admissibility,
    scale_bracket,
    symbol_growth_diagnostic,
    write_sweep_csv,
)
from contactflow.averaging import (
    DolgopyatParams,
    MollifierSpec,
    StableLeaf,
    default_dolgopyat_params,
    dolgopyat_experiment,
    dolgopyat_m_sweep,
    dolgopyat_value,
    leaf_through,
    mollify,
    mollify_detailed,
    stable_average,
    stable_decomposition_stats,
    stable_direction,
    write_decomposition_csv,
    write_dolgopyat_csv,
)

__version__ = "0.1.0"

__all__ = [
    "ArrangementDegeneracy",
    "ChartBoundary",
    "ClosednessViolation",
    "ConeNotInvariant",
    "ConfigError",
    "ContactFlowError",
    "DegenerateFrame",
    "EmptyCell",
    "HypothesisViolation",
    "NoiseFloor",
    "NonFinite",
    "NotInKernel",
    "PathDependence",
    "PieceExplosion",
    "SupportEscape",
    "ToleranceNotMet",
    "ContactChart",
    "ContactForm3",
    "check_contact_chart",
    "compose_charts",
    "contact_translation",
    "eval_alpha",
    "identity_chart",
    "leaf_straightening",
    "linear_contact_chart",
    "reeb_chart_at",
    "FlowDiag",
    "FlowPoint",
    "FlowPointBatch",
    "PiecewiseAffineTorusMap",
    "RoofFunction",
    "SuspensionFlow",
    "build_perturbed_map",
    "build_roof",
    "flow_backward",
    "flow_forward",
    "return_map",
    "sample_invariant",
    "single_piece_map",
    "standard_flow",
    "standard_map",
    "Cone2",
    "ConeField3",
    "ComplexityReport",
    "HyperbolicityParams",
    "check_bunching",
    "check_cone_invariance",
    "check_transversality",
    "complexity_counts",
    "default_params",
    "expansion_constants",
    "CorrelationSeries",
    "DecayFit",
    "Observable",
    "ResolventParams",
    "ResolventValue",
    "UlamModel",
    "constant_observable",
    "correlation",
    "fit_decay",
    "flow_box_bump",
    "resolvent_apply",
    "resolvent_observable",
    "resolvent_power",
    "resolvent_power_detailed",
    "transfer_apply",
    "ulam_build",
    "verify_lipschitz",
    "write_resolvent_csv",
    "AnisoSymbol",
    "CubeBump",
    "GridFunction3",
    "HalfSpace",
    "HyperbolicBlockMap",
    "aniso_norm_p2",
    "check_composition_contraction",
    "check_multiplier_charfun",
    "check_symbol_inequality",
    "composition_iteration_sweep",
    "multiplier_admissibility",
    "scale_bracket",
    "symbol_growth_diagnostic",
    "write_sweep_csv",
    "DolgopyatParams",
    "MollifierSpec",
    "StableLeaf",
    "default_dolgopyat_params",
    "dolgopyat_experiment",
    "dolgopyat_m_sweep",
    "dolgopyat_value",
    "leaf_through",
    "mollify",
    "mollify_detailed",
    "stable_average",
    "stable_decomposition_stats",
    "stable_direction",
    "write_decomposition_csv",
    "write_dolgopyat_csv",
    "__version__",
]
