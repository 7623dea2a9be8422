"""Localized orthogonal decomposition for semi-linear elliptic multiscale problems."""

from .bench import ConvergenceRow, ExperimentConfig, run_convergence, run_decay_study
from .clement import ClementOperator, build_clement
from .estimator import FineScaleSolver, LODSolver
from .fem import FeSpace, assemble_stiffness, composite_rule
from .lod import LocalizationContext, MultiscaleBasis, build_ms_basis, compute_correctors
from .mesh import TriMesh, build_unit_square_mesh, refine_uniform
from .newton import NewtonConfig, NewtonResult, damped_newton
from .problems import SemilinearProblem, test_problem

__all__ = [
    "ClementOperator",
    "ConvergenceRow",
    "ExperimentConfig",
    "FeSpace",
    "FineScaleSolver",
    "LODSolver",
    "LocalizationContext",
    "MultiscaleBasis",
    "NewtonConfig",
    "NewtonResult",
    "SemilinearProblem",
    "TriMesh",
    "assemble_stiffness",
    "build_clement",
    "build_ms_basis",
    "build_unit_square_mesh",
    "composite_rule",
    "compute_correctors",
    "damped_newton",
    "refine_uniform",
    "run_convergence",
    "run_decay_study",
    "test_problem",
]

__version__ = "0.1.0"
