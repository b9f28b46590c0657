"""trigap: simulation and verification of three competing particles.

Three particles on the line interact only through collisions of their
ranked positions; depending on which ranks carry Brownian noise and how
the collision push is split, the adjacent gaps (G, H) form a reflecting
Brownian motion in the nonnegative quadrant whose boundary local times A
and Gamma are the collision clocks. This package simulates the coupled
Skorokhod reflection exactly on a grid, unfolds ranked paths into named
particles by randomized collision resolution, and verifies the laws the
construction implies: local-time growth rates, collision behavior,
invariant gap distributions, and transform identities.
"""

from ._kernels import BACKEND
from .analysis import (
    CornerConstants,
    ItoIdentityReport,
    LyapunovReport,
    corner_constants,
    ito_drift_identity_check,
    lambert_u,
    lyapunov_drift_check,
)
from .cli import ExperimentSpec, coin_stream, emit_paths, emit_summary, run_experiment
from .model import (
    DriftSpec,
    InitialPositions,
    ReflectionSpec,
    SamplePath,
    SimConfig,
    StationarityResult,
    SystemKind,
    TimeGrid,
    default_picard_tol,
    reflection_spec,
    stationarity_check,
)
from .skorokhod import (
    GapPair,
    LocalTimeReport,
    NonConvergence,
    RegulatorPair,
    local_time_identification_check,
    reflect_1d,
    solve_coupled_regulators,
)
from .stats import (
    BoundaryMassReport,
    CornerOccupationReport,
    EnsembleSummary,
    GammaConjectureReport,
    LaplaceResidualRow,
    LlnReport,
    MeanSE,
    ProductExponentialReport,
    ReplicationSummary,
    SymmetricCaseReport,
    WitnessReport,
    boundary_masses,
    corner_occupation_estimate,
    decorrelation_time,
    downcrossing_local_time,
    ensemble_summary,
    gamma_conjecture_test,
    ks_critical,
    laplace_bar_residual,
    lln_rates,
    no_product_form_witness,
    occupancy_fractions,
    product_exponential_test,
    summarize_replication,
    symmetric_case_checks,
)
from .systems import (
    BrownianCheckReport,
    CollisionReport,
    NameTriple,
    PermutationState,
    RankTriple,
    detect_collisions,
    simulate_ranks,
    unfold_names,
    verify_recovered_brownians,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BACKEND",
    # model
    "SystemKind",
    "DriftSpec",
    "InitialPositions",
    "TimeGrid",
    "SamplePath",
    "ReflectionSpec",
    "SimConfig",
    "StationarityResult",
    "reflection_spec",
    "stationarity_check",
    "default_picard_tol",
    # skorokhod
    "RegulatorPair",
    "GapPair",
    "NonConvergence",
    "LocalTimeReport",
    "reflect_1d",
    "solve_coupled_regulators",
    "local_time_identification_check",
    # systems
    "PermutationState",
    "RankTriple",
    "NameTriple",
    "CollisionReport",
    "BrownianCheckReport",
    "simulate_ranks",
    "detect_collisions",
    "unfold_names",
    "verify_recovered_brownians",
    # stats
    "MeanSE",
    "ks_critical",
    "decorrelation_time",
    "downcrossing_local_time",
    "occupancy_fractions",
    "ReplicationSummary",
    "EnsembleSummary",
    "summarize_replication",
    "ensemble_summary",
    "LlnReport",
    "lln_rates",
    "BoundaryMassReport",
    "boundary_masses",
    "LaplaceResidualRow",
    "laplace_bar_residual",
    "SymmetricCaseReport",
    "symmetric_case_checks",
    "GammaConjectureReport",
    "gamma_conjecture_test",
    "ProductExponentialReport",
    "product_exponential_test",
    "WitnessReport",
    "no_product_form_witness",
    "CornerOccupationReport",
    "corner_occupation_estimate",
    # analysis
    "ItoIdentityReport",
    "LyapunovReport",
    "CornerConstants",
    "ito_drift_identity_check",
    "lyapunov_drift_check",
    "lambert_u",
    "corner_constants",
    # cli
    "ExperimentSpec",
    "run_experiment",
    "emit_paths",
    "emit_summary",
    "coin_stream",
]
