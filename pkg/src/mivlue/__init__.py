"""Minimum integrated variance linear unbiased estimators for network experiments.

The package enumerates a design's support exactly: unbiasedness is a linear
system in the per-allocation weights, optimality a quadratic program over it,
and estimator quality is evaluated by summing over the support.
"""

from .design import (
    Design,
    bernoulli_design,
    coloring_design,
    crd_design,
    joint_propensity,
    marginal_propensity,
    mixture,
    orbit_design_ring,
    read_design,
    write_design,
)
from .estimators import (
    WeightScheme,
    ht_weights,
    naive_weights,
    read_weights,
    stratified_naive_weights,
    write_weights,
)
from .evaluation import ESTIMATORS, EvalReport, SweepConfig, exact_moments, run_sweep, six_estimators
from .graph import (
    Coloring,
    Graph,
    connected_components,
    generate,
    greedy_coloring,
    read_edgelist,
    shared_neighbor_graph,
    treated_degree,
    treated_degrees,
    write_edgelist,
)
from .kernels import BACKEND
from .models import ModelKind, ParamSet, SamplingSpec, estimand_beta_bar, outcomes, sample_params, upcast
from .prior import (
    PriorCov,
    assemble_sigma_z,
    integrated_variance,
    read_prior,
    sania_constant,
    sania_uncorrelated,
    sanasia_independent,
    sutva_constant,
    sutva_uncorrelated,
    write_prior,
)
from .solver import (
    InfeasibleError,
    NonOptimalError,
    PreconditionError,
    SingularSigmaError,
    SolveReport,
    SolverError,
    read_report,
    solve,
    solve_general,
    solve_nonsingular,
    solve_sanasia,
    solve_thm3,
    solve_thm4_nia,
    solve_vertex_transitive,
    write_report,
)
from .unbiased import build_constraints, check_unbiased, exists_by_feasibility, exists_nia, exists_sania

__version__ = "0.1.0"
