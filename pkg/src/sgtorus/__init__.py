"""Numerical laboratory for dual semigeostrophic flow on the 2D torus."""

from .errors import (
    BadDensity,
    CFLViolation,
    ConfigError,
    DegenerateMap,
    DegenerateSection,
    EmptySection,
    FactorizationResidualTooLarge,
    GridMismatch,
    IndefiniteOperator,
    InsufficientSamples,
    InvariantViolation,
    LostConvexity,
    NegativeInput,
    NonConvergence,
    NonConvexInput,
    ResidualTooLarge,
    SectionWrapsTorus,
    SGTorusError,
    SolverError,
    SolverStall,
    ZeroEnergy,
)
from .grid import (
    PeriodicDisplacement,
    TorusField,
    TorusGrid,
    integral,
    periodic_distance,
    periodic_divergence,
    periodic_gradient,
    sample_bilinear,
)
from .ma import (
    ConvexPotential,
    CofactorField,
    LegendrePotential,
    cofactor,
    legendre,
    solve_ma_periodic,
)
from .sections import (
    JohnNormalization,
    Section,
    extract_section,
    john_normalize,
    rescale_problem,
    section_ladder,
    section_w21_norm,
)
from .lma import (
    DivergenceFormOperator,
    GreenFunction,
    green_function,
    green_integrability_report,
    level_set_decay,
    sobolev_ratio,
    solve_dirichlet_lma,
    solve_periodic_lma,
)
from .regularity import (
    harnack_quotient,
    holder_fit,
    oscillation,
    oscillation_decay,
)
from .dynamics import (
    RunResult,
    SGState,
    holder_in_time_report,
    recover_eulerian,
    run,
    step,
    transport_step,
    velocity_from_potential,
)
from .polar import (
    MapTimeSeries,
    PolarFactorization,
    factorize,
    polar_time_regularity,
    pushforward_density,
)

__version__ = "0.1.0"
