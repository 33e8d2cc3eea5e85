"""Offline contract signing: problem construction and the two solvers."""
from .exact import NodeBudgetExceeded, solve_exact_ie
from .problem import ForwardProblem, SolveResult, build_problem, build_spot_problem
from .sca import RelaxedPoint, SCAParams, certify, gaussian_surrogates, round_and_repair, solve_sca

__all__ = [
    "ForwardProblem",
    "NodeBudgetExceeded",
    "RelaxedPoint",
    "SCAParams",
    "SolveResult",
    "build_problem",
    "build_spot_problem",
    "certify",
    "gaussian_surrogates",
    "round_and_repair",
    "solve_exact_ie",
    "solve_sca",
]
