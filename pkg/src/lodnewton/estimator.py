"""Estimator-style front end.

``fit`` takes a :class:`~lodnewton.problems.SemilinearProblem`, builds the
discretisation and solves; ``predict`` evaluates the discrete solution at
points of the unit square.  Hyper-parameters follow the scikit-learn
conventions (set in ``__init__``, validated in ``fit``, fitted state in
attributes with a trailing underscore), so ``get_params``/``set_params`` and
``sklearn.base.clone`` work.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .clement import build_clement
from .fem import FeSpace, composite_rule
from .lod import VARIANTS, LocalizationContext, build_ms_basis
from .mesh import build_unit_square_mesh
from .newton import GalerkinSystem, NewtonConfig, solve_newton

__all__ = ["FineScaleSolver", "LODSolver", "check_points"]


def check_points(X):
    """Validate an ``(n_points, 2)`` array of points in the closed unit square."""
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != 2:
        raise ValueError(f"expected points with 2 coordinates, got {X.shape[1]}")
    if np.any(X < 0.0) or np.any(X > 1.0):
        raise ValueError("points must lie in the closed unit square")
    return X


def _check_power_of_two(name, value):
    if not isinstance(value, (int, np.integer)) or value < 1 or value & (value - 1):
        raise ValueError(f"{name} must be a positive power of two, got {value!r}")


class _NewtonMixin:
    def _newton_config(self):
        return NewtonConfig(abstol=self.abstol, reltol=self.reltol, max_iters=self.max_iter,
                            damping_enabled=self.damping)

    def predict(self, X):
        """Values of the fitted discrete solution at the points ``X``."""
        check_is_fitted(self, "fine_solution_")
        X = check_points(X)
        return self.fine_space_.evaluate(self.fine_solution_, X)


class FineScaleSolver(_NewtonMixin, BaseEstimator):
    """Reference P1 solution on the uniform fine mesh.

    Parameters
    ----------
    fine_n : int
        Fine cells per side (``h = 1/fine_n``).
    quad_subdivision : int
        Composite quadrature subdivision for coefficient, nonlinearity and source.
    abstol, reltol : float
        Newton tolerances.
    max_iter : int
    damping : bool
    """

    def __init__(self, fine_n=64, quad_subdivision=4, abstol=1e-10, reltol=0.0,
                 max_iter=50, damping=True):
        self.fine_n = fine_n
        self.quad_subdivision = quad_subdivision
        self.abstol = abstol
        self.reltol = reltol
        self.max_iter = max_iter
        self.damping = damping

    def fit(self, problem, y=None):
        _check_power_of_two("fine_n", self.fine_n)
        self.quad_ = composite_rule(self.quad_subdivision)
        self.fine_space_ = FeSpace(build_unit_square_mesh(self.fine_n))
        self.system_ = GalerkinSystem(problem, self.fine_space_, None, self.quad_)
        self.newton_result_ = solve_newton(self.system_, self._newton_config())
        self.fine_solution_ = self.newton_result_.coefficients
        self.problem_ = problem
        return self


class LODSolver(_NewtonMixin, BaseEstimator):
    """Localized orthogonal decomposition with a damped Newton solve.

    ``fit`` computes the multiscale basis from the diffusion coefficient of
    the problem and solves the Galerkin problem in its span.  The basis
    depends on ``A`` only, so :meth:`solve` reuses it for problems with other
    sources or nonlinearities.

    Parameters
    ----------
    coarse_n, fine_n : int
        Cells per side of the coarse and fine mesh (powers of two).
    layers : float or None
        Coarse layers of the corrector patches, in steps of 0.5;
        ``None`` disables truncation.
    fine_layers : int, optional
        Patch extent in fine element layers, overriding ``layers * H/h``.
    variant : {"element", "nodal"}
        Corrector localisation, see :mod:`lodnewton.lod`.
    quad_subdivision, abstol, reltol, max_iter, damping
        As for :class:`FineScaleSolver`.
    n_jobs : int
        Threads for the corrector solves.

    Examples
    --------
    >>> from lodnewton.problems import test_problem
    >>> est = LODSolver(coarse_n=4, fine_n=16, layers=1).fit(test_problem(0.25))
    >>> est.coefficients_.shape
    (9,)
    """

    def __init__(self, coarse_n=8, fine_n=64, layers=2.0, fine_layers=None, variant="element",
                 quad_subdivision=4, abstol=1e-10, reltol=0.0, max_iter=50, damping=True,
                 n_jobs=1):
        self.coarse_n = coarse_n
        self.fine_n = fine_n
        self.layers = layers
        self.fine_layers = fine_layers
        self.variant = variant
        self.quad_subdivision = quad_subdivision
        self.abstol = abstol
        self.reltol = reltol
        self.max_iter = max_iter
        self.damping = damping
        self.n_jobs = n_jobs

    def _validate(self):
        _check_power_of_two("coarse_n", self.coarse_n)
        _check_power_of_two("fine_n", self.fine_n)
        if self.fine_n <= self.coarse_n:
            raise ValueError("the fine mesh must be strictly finer than the coarse mesh")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    def fit(self, problem, y=None):
        self._validate()
        self.quad_ = composite_rule(self.quad_subdivision)
        self.coarse_space_ = FeSpace(build_unit_square_mesh(self.coarse_n))
        self.fine_space_ = FeSpace(build_unit_square_mesh(self.fine_n))
        self.clement_ = build_clement(self.coarse_space_, self.fine_space_)
        self.context_ = LocalizationContext(self.clement_, problem.A, self.quad_)
        self.basis_ = build_ms_basis(self.context_, self.layers, variant=self.variant,
                                     n_jobs=self.n_jobs, fine_layers=self.fine_layers)
        self.problem_ = problem
        result = self._solve(problem)
        self.newton_result_ = result
        self.coefficients_ = result.coefficients
        self.fine_solution_ = self.basis_.to_fine(result.coefficients)
        return self

    def _solve(self, problem):
        system = GalerkinSystem(problem, self.fine_space_, self.basis_.matrix, self.quad_,
                                stiffness=self.context_.stiffness)
        return solve_newton(system, self._newton_config())

    def solve(self, problem):
        """Solve another problem with the same coefficient in the fitted space.

        Returns the Newton result; ``transform(result.coefficients)`` gives
        the fine representation.  The fitted state is not modified.
        """
        check_is_fitted(self, "basis_")
        if problem.A is not self.problem_.A:
            raise ValueError("the multiscale basis was built for a different coefficient")
        return self._solve(problem)

    def transform(self, X):
        """Map coarse coefficient vectors (rows of ``X``) to fine coefficient vectors."""
        check_is_fitted(self, "basis_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.basis_.dimension:
            raise ValueError(f"expected {self.basis_.dimension} coarse coefficients, got {X.shape[1]}")
        return np.asarray((self.basis_.matrix @ X.T).T)
