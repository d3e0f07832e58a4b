"""Value-function sensitivity analysis and stationarity certification for
nonsmooth bilevel programs with inequality constraints at desk scale."""

from .errors import (
    BudgetError,
    DimensionMismatchError,
    DomainError,
    EmptyEstimateError,
    EmptySetError,
    EvaluationError,
    InfeasibleError,
    InfeasiblePointError,
    NotApplicableError,
    NotPolyhedralError,
    ParseError,
    SemanticsError,
    ToolkitError,
    UnsupportedDimensionError,
    VariableIndexError,
)
from .model import (
    BilevelProgram,
    Branch,
    Expr,
    clarke_generators,
    eval_expr,
    parse_program,
    smooth_branches,
)
from .subdiff import (
    FdClusters,
    Polytope,
    contains,
    distance,
    fd_subgradient_samples,
    hull,
    lipschitz_estimate,
    minkowski_sum,
    negate,
    normal_cone_polyhedral,
    scale,
)
from .valuefn import (
    GridSpec,
    SolutionSet,
    lower_solutions,
    lower_value,
    optimistic_solutions,
    optimistic_value,
    pessimistic_solutions,
    pessimistic_value,
    sample_curve,
)
from .sensitivity import (
    Caps,
    Estimate,
    MultiplierSet,
    estimate_optimistic,
    estimate_pessimistic,
    estimate_simple_convex,
    lambda_o_set,
    lambda_set,
)
from .cq import (
    CQVerdict,
    check_codcq_convex,
    check_gen_mfcq,
    check_inner_regularity,
    check_pointbased_cq,
    check_polyhedral_calmness,
    cq_bundle,
)
from .certify import (
    Certificate,
    certify_optimistic,
    certify_pessimistic,
    certify_value_stationarity,
    minimax_reduction_check,
    recheck_certificate,
)

__version__ = "0.1.0"
