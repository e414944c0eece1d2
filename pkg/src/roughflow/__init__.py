"""Regularised theta-method flows of rough velocity fields."""
from .analysis import (
    ConvergenceStudy,
    ErrorReport,
    GridSampling,
    RateFit,
    chebyshev_bound,
    empirical_orders,
    fit_convergence_rate,
    l1_flow_error,
    log_functional_Q,
    measure_errors,
    pointwise_trajectory_error,
    superlevel_measure,
)
from .errors import (
    ConfigError,
    ContractionError,
    DomainError,
    ResourceError,
    RoughFlowError,
    StepError,
    UsageError,
)
from .fields import FIELD_IDS, ExactFlow, VelocityField, make_exact_flow, make_field
from .theta import (
    DiscreteFlow,
    ThetaScheme,
    TimeGrid,
    couple_epsilon,
    implicit_step,
    integrate_flow,
    jacobian_determinants,
)
from .transport import (
    InitialDatum,
    backward_field,
    integrate_backward,
    lagrangian_error,
    make_datum,
    mollify_datum,
    transport_solution,
)

__version__ = "0.1.0"
