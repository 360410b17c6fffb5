"""Fast Fourier-feature kernel regression on ``[-L, L]^d``.

Normal equations are assembled from nonuniform FFTs, applied as Toeplitz
operators and solved with preconditioned conjugate gradients.
"""
from .fourier_grid import (
    ESTIMATOR_KINDS,
    BoxDomain,
    DiffOperatorSpec,
    MultiIndexGrid,
    box_fourier_generating,
    default_half_period,
    diff_op_diagonal,
    feature_map,
    grid_indices,
    schedule_hyperparams,
    sobolev_diagonal,
)
from .nufft import NufftPlan, nufft_type1, nufft_type1_batched, nufft_type2, scale_points
from .toeplitz import (
    BlockOperator,
    DenseOperator,
    DiagonalOperator,
    IdentityOperator,
    LinearOperatorExpr,
    SandwichOperator,
    ScaledOperator,
    SumOperator,
    ToeplitzOperator,
    build_empirical_covariance,
    empirical_moments,
    toeplitz_from_generating,
    toeplitz_matvec,
)
from .solvers import CgConfig, SolveReport, conjugate_gradient, jacobi_preconditioner
from .validation import OutOfDomainError
from .model import FittedModel, SampleSet
from .fitting import (
    GridSearchResult,
    NormalEquations,
    assemble,
    fit,
    fit_additive,
    fit_dense_oracle,
    fit_lowbias,
    fit_pik_box,
    fit_pik_collocation,
    fit_sobolev,
    grid_search_lambda,
    predict,
    rhs_vector,
    split_samples,
)
from .estimators import (
    AdditiveRegressor,
    LowBiasRegressor,
    PhysicsInformedRegressor,
    SobolevRegressor,
)

__version__ = "0.1.0"
