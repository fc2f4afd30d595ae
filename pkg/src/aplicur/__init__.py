"""Adaptively preconditioned LSQR driven by an incremental single-sketch CUR."""

from .driver import PhaseReport, SolveResult, SolverConfig, plain_lsqr, reprecondition_check, solve
from .problemgen import ProblemInstance, make_problem

__all__ = ["PhaseReport", "ProblemInstance", "SolveResult", "SolverConfig", "make_problem",
           "plain_lsqr", "reprecondition_check", "solve"]
__version__ = "0.1.0"
