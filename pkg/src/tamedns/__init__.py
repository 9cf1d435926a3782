"""Spectral Galerkin laboratory for the stochastic tamed Navier-Stokes equation on the 3-torus."""

__version__ = "0.1.0"

from .coefficients import (  # noqa: E402
    AdditiveNoiseMap,
    AssumptionViolation,
    CoefficientModel,
    from_config_block,
    to_config_block,
    validate_assumptions,
)
from .dynamics import K_operator, Operators, advection, drift_A, noise_B, taming_term  # noqa: E402
from .ergodicity import (  # noqa: E402
    comparison_bound,
    exp_moment_probe,
    kb_average,
    moment_audit,
    support_probe,
)
from .integrator import (  # noqa: E402
    BlowUpError,
    SimConfig,
    TrajectoryRecord,
    simulate,
    simulate_ensemble,
    step,
    twin_simulate,
)
from .rng import NoiseStream, brownian_increments  # noqa: E402
from .sensitivity import (  # noqa: E402
    ControlState,
    build_control,
    derivative_flow,
    gradient_probe,
    highmode_decay_experiment,
    malliavin_derivative,
)
from .spectral import (  # noqa: E402
    GridField,
    ModeSet,
    ResolutionError,
    SpectralField,
    build_mode_set,
    leray_project,
    lp_norm,
    pairing,
    sobolev_norm,
    to_physical,
    to_spectral,
    truncate,
)
from .taming import TamingConfig, taming_g, taming_g_prime, taming_g_second  # noqa: E402
