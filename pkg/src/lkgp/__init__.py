"""Exact Gaussian process regression on partially observed product grids."""

from .errors import (
    ConvergenceError,
    DuplicateObservation,
    EmptyMask,
    IndexOutOfGrid,
    LkgpError,
    NotPSD,
    NumericalBreakdown,
    OracleTooLarge,
    ParseError,
    ShapeMismatch,
)
from .grid import (
    CsvSchema,
    ObservationMask,
    PartialGrid,
    Standardization,
    Truncation,
    Uniform,
    build_partial_grid,
    generate_mask,
    load_csv,
    save_csv,
    standardize,
)
from .kernels import (
    ICMKernel,
    PeriodicKernel,
    ProductKernel,
    SEKernel,
    eval_diag,
    eval_matrix,
    grad_matrix,
    kernel_from_dict,
    to_constrained,
    to_unconstrained,
)
from .linops import (
    CostCounters,
    DenseOperator,
    LatentKroneckerOperator,
    breakeven_points,
    dense_materialize,
    kron_mvm,
    project,
    projected_kron_apply,
    unproject,
)
from .model import (
    FitReport,
    LkgpModel,
    PosteriorSamples,
    Prediction,
    exact_posterior_reference,
    fit,
    log_marginal_likelihood_exact,
    metrics,
    mll_grad_estimate,
    pathwise_posterior_samples,
    predict,
    prior_grid_sample,
)
from .solvers import (
    PivotedCholeskyFactor,
    SolveReport,
    SolverConfig,
    cg_solve,
    make_probes,
    pivoted_cholesky,
    precond_apply,
)

__version__ = "0.1.0"
