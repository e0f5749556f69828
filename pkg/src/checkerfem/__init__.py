"""Goal-adaptive finite elements for a checkerboard of elliptic models."""

from .adapt import AdaptConfig, ConvergenceRecord, mark, run
from .dwr import EstimatorReport, cell_indicators, effectivity, estimate, localize_pu
from .goals import (
    DEFAULT_REFERENCE_VALUES,
    POINT_QOI,
    QOIS,
    CombinedWeights,
    combined_derivative,
    combined_weights,
    evaluate_qoi,
    qoi_derivative,
)
from .mesh import AdaptiveMesh, Cell, Subdomain, initial_mesh, locate, refine
from .model import ModelParams, diffusion_exponent, jacobian, residual
from .solver import (
    LinearSolveStats,
    NewtonConfig,
    adjoint_solve,
    iteration_error,
    newton_solve,
)
from .spaces import (
    ConstraintSet,
    DiscreteField,
    FunctionSpace,
    QuadratureRule,
    build_space,
    cell_quadrature,
    embed_q1_in_q2,
    evaluate,
    transfer,
)

__version__ = "0.1.0"
