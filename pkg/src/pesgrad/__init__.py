"""Gradient estimators for unrolled computation graphs.

Persistent evolution strategies (PES) alongside truncated ES, PES with an
analytic window gradient, TBPTT, RTRL and UORO, plus benchmark tasks and
tools for measuring estimator variance.
"""

from .core import (
    SystemState,
    TelescopedSystem,
    UnrolledSystem,
    UnrollResult,
    full_gradient,
    full_loss,
    telescope,
    unroll,
    unroll_particles,
    window_gradient,
)
from .errors import (
    ConfigError,
    HorizonError,
    IdxFormatError,
    NonFiniteGradientError,
    NonFiniteLossError,
    PesError,
    UnsupportedCapabilityError,
)
from .estimators import (
    ESTIMATOR_KINDS,
    GradientEstimate,
    NoiseSpec,
    OnlineEstimator,
    OnlineJacobianState,
    ParticleEnsemble,
    es_step,
    pes_analytic_step,
    pes_step,
    reset,
    reset_ensemble,
    reset_jacobian_state,
    rtrl_step,
    tbptt_step,
    uoro_step,
)
from .optim import OptimizerState, adam_update, clip_coordinates, optimizer_step, sgd_update

__version__ = "0.1.0"
