"""Simulation and verification engine for generalized Friedman's urn models."""

from .covariance import (
    CovarianceReport,
    NoiseMatrices,
    RpwAsymptotics,
    gamma_critical,
    gamma_subcritical,
    noise_for_rule,
    rpw_closed_forms,
    sigma_matrices,
    theoretical_gamma,
)
from .exceptions import GFUError, NumericalError, ValidationError
from .harness import ExperimentConfig, ExperimentReport, compare, lil_envelope, mc_experiment
from .limit import (
    LimitPath,
    composite_ensemble,
    composite_paths,
    ensemble_stats,
    sde_residual,
    simulate_equ1,
    simulate_equ2,
)
from .rules import (
    PowerDecay,
    RpwParams,
    assumption_diagnostics,
    deterministic_rule,
    homogeneous_rule,
    multinomial_rule,
    nonhomogeneous_wrapper,
    rpw_rule,
)
from .spectral import (
    GeneratingMatrix,
    SpectralData,
    growth_profile,
    matrix_power,
    spectral_analyze,
    validate_generating_matrix,
)
from .urn import (
    Trajectory,
    conditional_cov_check,
    decompose,
    init_urn,
    martingale_tracks,
    run,
    simulate,
    simulate_endpoints,
    step,
)

__version__ = "0.1.0"
