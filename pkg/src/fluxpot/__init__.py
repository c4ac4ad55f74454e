"""Bound-preserving Q1 finite elements with FCT, MCL and optimization-based flux potentials."""
from .bench import ProblemSpec, RunReport, error_norms, run_benchmark
from .limiters import GlobalBox
from .problems import ProblemKind, make_problem
from .schemes import Scheme, SchemeConfig, run

__all__ = [
    "GlobalBox", "ProblemKind", "ProblemSpec", "RunReport", "Scheme", "SchemeConfig",
    "error_norms", "make_problem", "run", "run_benchmark",
]
__version__ = "0.1.0"
