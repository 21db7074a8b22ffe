"""Implementable quality schedules, rating-system construction and designer-optimal ratings.

Sellers of privately known type choose quality; a rating system garbles
quality into public signals and buyers pay the posterior mean. The package
checks which signaled-quality schedules a rating system can implement,
builds such systems, solves for designer-optimal schedules under several
welfare objectives, and handles the two-type random-quality extension.
"""
from .construction import construct_rating, full_mixing
from .equilibrium import check_ic, signaled_from_envelope, verify_equilibrium
from .errors import InternalError, MonotonicityError, PreconditionError, ValidationError
from .foundation import (CostModel, TypeGrid, WelfareWeights, cost_model, make_type_grid,
                         normalize_weights, weight_profile)
from .kernels import BACKEND
from .majorization import binding_points, check_majorization
from .oracle import certify_optimality, enumerate_partitions, random_garbling, two_type_grid_oracle
from .random_quality import (GainFunction, MonotonePartition, outcome_family, solve_auxiliary,
                             solve_two_type)
from .rating import GarblingMatrix, RatingSystem, check_separating, double_expectation
from .solvers import (SolverSolution, first_best, solve_high_quality, solve_low_quality,
                      solve_mid_quality, solve_revenue, solve_total)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CostModel",
    "GainFunction",
    "GarblingMatrix",
    "InternalError",
    "MonotonePartition",
    "MonotonicityError",
    "PreconditionError",
    "RatingSystem",
    "SolverSolution",
    "TypeGrid",
    "ValidationError",
    "WelfareWeights",
    "binding_points",
    "certify_optimality",
    "check_ic",
    "check_majorization",
    "check_separating",
    "construct_rating",
    "cost_model",
    "double_expectation",
    "enumerate_partitions",
    "first_best",
    "full_mixing",
    "make_type_grid",
    "normalize_weights",
    "outcome_family",
    "random_garbling",
    "signaled_from_envelope",
    "solve_auxiliary",
    "solve_high_quality",
    "solve_low_quality",
    "solve_mid_quality",
    "solve_revenue",
    "solve_total",
    "solve_two_type",
    "two_type_grid_oracle",
    "verify_equilibrium",
    "weight_profile",
]
