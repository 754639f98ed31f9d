"""Simulator for stabilized DANE-type distributed convex optimization."""

from . import algorithms, local_solvers, problems, sampling, subproblem
from .algorithms import (
    AdaptiveLambda,
    LocalSolverCapError,
    RoundOutput,
    ServerState,
    acc_coefficients,
    acc_sdane_round,
    dane_round,
    fedprox_round,
    initial_state,
    sdane_dl_round,
    sdane_round,
    stabilized_ppm_step,
)
from .local_solvers import FGD, GD, SGD, Exact, LocalSolveResult
from .problems import (
    ClientFunction,
    DissimilarityReport,
    ProblemInstance,
    estimate_dissimilarity,
    estimate_sod,
    gen_logreg,
    gen_polyhedron,
    gen_quadratic,
    reference_solve,
)
from .sampling import SampleDraw, sample_subset
from .subproblem import ProxSubproblem, StoppingRule, build_subproblem

__version__ = "0.1.0"
