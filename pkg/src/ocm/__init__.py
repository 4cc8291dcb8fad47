"""Certified one-sided approximation of continuous nonlinear PDE systems.

The pipeline: parse an operator, tile the domain, place one Taylor piece
per subcell so the residual sits at the band center, certify the band on
off-skeleton samples, and refine the band toward zero to produce a
Cauchy sequence of approximants with an envelope.  A separate module
checks the convergence-space axioms the construction leans on, on
finite ground sets.
"""

from .domain import Box, CellPartition, Skeleton, build_partition, sample_points, skeleton_of, subdivide
from .expr import (
    EvalDomainError,
    ParseError,
    PdeSystem,
    apply_operator,
    eval_operator,
    parse_rhs,
    parse_system,
    print_expr,
    print_system,
)
from .baire import (
    EnvelopePair,
    GridFn,
    classify_semicontinuity,
    embed_piecewise,
    lower_baire,
    make_lattice,
    nlsc_regularize,
    upper_baire,
)
from .approx import (
    DeltaCollapse,
    JetPoint,
    PiecewisePoly,
    RangeViolation,
    ResidualCertificate,
    TaylorPiece,
    check_residual,
    global_approx,
    local_approx,
    rhs_from_exprs,
    solve_jet,
    taylor_poly,
)
from .order import (
    OrderIntervalSeq,
    SolutionTrace,
    cauchy_gap,
    le_off_skeleton,
    nested_interval_valid,
    operator_image,
    order_converges,
    pullback_le,
    refine_solution,
)

__version__ = "0.1.0"
