"""Stochastic gradient HMC and Langevin samplers for nonconvex objectives
with discontinuous stochastic gradients."""
from .errors import ConfigError, DivergenceError, UnsupportedCheck
from .oracle import (
    GradientOracle,
    QuadraticOracle,
    QuantileOracle,
    QuantileProblem,
    TargetDistribution,
    quadratic_oracle,
    quantile_grad,
    quantile_oracle,
    sample_dist,
    true_quantile,
)
from .sampler import (
    KineticState,
    SamplerConfig,
    Trajectory,
    run_chain,
    run_reference_chain,
    sghmc_step,
    sgld_step,
)

__version__ = "0.1.0"
