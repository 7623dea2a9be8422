"""Galerkin residual, Jacobian and damped Newton iteration.

A Galerkin space is given by a sparse basis matrix whose columns are fine
coefficient vectors (the multiscale basis), or by ``None`` for the fine
space itself.  Every integral is evaluated on the fine mesh, so the same
code serves the reference solve and the multiscale solve.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import assemble_load, assemble_stiffness, composite_rule, random_smooth_field

logger = logging.getLogger(__name__)

__all__ = [
    "GalerkinSystem",
    "NewtonConfig",
    "NewtonResult",
    "NewtonConvergenceError",
    "DampingUnderflowError",
    "residual",
    "jacobian",
    "damped_newton",
    "solve_newton",
    "monotonicity_probe",
    "write_history",
]

DAMPING_FLOOR = 2.0**-30


class NewtonConvergenceError(RuntimeError):
    """Newton did not reach the tolerance; ``result`` carries the history."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


class DampingUnderflowError(NewtonConvergenceError):
    """The Armijo loop halved the step below ``2**-30``."""


@dataclass
class NewtonConfig:
    abstol: float = 1e-10
    reltol: float = 0.0
    max_iters: int = 50
    damping_enabled: bool = True
    initial_guess: np.ndarray | None = None

    def __post_init__(self):
        if self.abstol < 0 or self.reltol < 0 or self.abstol + self.reltol <= 0:
            raise ValueError("tolerances must be non-negative and not both zero")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class NewtonResult:
    coefficients: np.ndarray
    residual_norms: list = field(default_factory=list)
    damping_factors: list = field(default_factory=list)
    tolerances: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.damping_factors)


class GalerkinSystem:
    """Residual and Jacobian of a semi-linear problem on a Galerkin subspace.

    Parameters
    ----------
    problem : SemilinearProblem
    space : FeSpace
        Fine space on which all integrals are evaluated.
    basis : sparse matrix (N, n) or None
        Columns span the Galerkin space; ``None`` is the fine space itself.
    quad : QuadratureRule
        Used for the coefficient, the nonlinearity and the source.
    stiffness : sparse matrix, optional
        Fine stiffness for ``problem.A`` if already assembled.
    """

    def __init__(self, problem, space, basis=None, quad=None, stiffness=None):
        self.problem = problem
        self.space = space
        self.quad = quad or composite_rule(4)
        if stiffness is None:
            stiffness = assemble_stiffness(space, problem.A, self.quad)
        self.fine_stiffness = stiffness
        self.basis = None if basis is None else sp.csr_matrix(basis)
        self.fine_load = assemble_load(space, problem.g, self.quad)
        self.stiffness = self._project(stiffness)
        self.load = self._restrict(self.fine_load)

        points, weights = space.quadrature(self.quad)
        self._points = points.reshape(-1, 2)
        self._weights = weights
        self._phi = self.quad.points

    @property
    def dimension(self):
        return self.space.dimension if self.basis is None else self.basis.shape[1]

    def _project(self, matrix):
        if self.basis is None:
            return matrix.tocsr()
        return (self.basis.T @ matrix @ self.basis).tocsr()

    def _restrict(self, vector):
        return vector if self.basis is None else self.basis.T @ vector

    def fine_state(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (self.dimension,):
            raise ValueError(f"coefficient vector has shape {alpha.shape}, expected ({self.dimension},)")
        return alpha if self.basis is None else self.basis @ alpha

    def _state(self, u):
        vals = self.space.to_vertices(u)[self.space.mesh.triangles]
        uq = vals @ self._phi.T
        grad = np.einsum("ta,tad->td", vals, self.space.gradients)
        gradq = np.broadcast_to(grad[:, None, :], uq.shape + (2,))
        return uq.reshape(-1), gradq.reshape(-1, 2)

    def nonlinear_vector(self, u):
        """Fine vector ``<F(u, grad u), lambda_i^h>``."""
        if self.problem.is_linear:
            return np.zeros(self.space.dimension)
        xi, zeta = self._state(u)
        vals = self.problem.F(self._points, xi, zeta).reshape(self._weights.shape)
        local = np.einsum("tq,tq,qa->ta", self._weights, vals, self._phi)
        return self.space.assemble_vector(local)

    def nonlinear_matrix(self, u):
        """Fine derivative of :meth:`nonlinear_vector`; row = test, column = trial."""
        n = self.space.dimension
        if self.problem.is_linear:
            return sp.csr_matrix((n, n))
        xi, zeta = self._state(u)
        shape = self._weights.shape
        d1 = self.problem.dF_dxi(self._points, xi, zeta).reshape(shape)
        d2 = self.problem.dF_dzeta(self._points, xi, zeta).reshape(shape + (2,))
        w = self._weights
        local = np.einsum("tq,qa,qb->tab", w * d1, self._phi, self._phi)
        local += np.einsum("tq,qa,tqd,tbd->tab", w, self._phi, d2, self.space.gradients)
        return self.space.assemble_matrix(local)

    def residual(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        u = self.fine_state(alpha)
        return self.stiffness @ alpha + self._restrict(self.nonlinear_vector(u)) - self.load

    def jacobian(self, alpha):
        if self.problem.is_linear:
            self.fine_state(alpha)
            return self.stiffness
        u = self.fine_state(alpha)
        return (self.stiffness + self._project(self.nonlinear_matrix(u))).tocsr()


def residual(problem, space, basis, alpha, quad=None):
    return GalerkinSystem(problem, space, basis, quad).residual(alpha)


def jacobian(problem, space, basis, alpha, quad=None):
    return GalerkinSystem(problem, space, basis, quad).jacobian(alpha)


def _solve_linear(matrix, rhs):
    if matrix.shape[0] <= 400:
        return np.linalg.solve(matrix.toarray(), rhs)
    return spla.splu(sp.csc_matrix(matrix)).solve(rhs)


def solve_newton(system, config=None):
    """Damped Newton iteration with Armijo step halving.

    Every outer iteration restarts at a full step and halves it until
    ``|G(alpha + zeta * delta)| < (1 - zeta / 2) |G(alpha)|``; with
    ``damping_enabled=False`` the full step is always taken.
    """
    config = config or NewtonConfig()
    alpha = (np.zeros(system.dimension) if config.initial_guess is None
             else np.array(config.initial_guess, dtype=float))
    G = system.residual(alpha)
    norm = float(np.linalg.norm(G))
    tol = norm * config.reltol + config.abstol
    result = NewtonResult(coefficients=alpha, residual_norms=[norm], tolerances=[tol])

    while norm > tol:
        if result.iterations >= config.max_iters:
            result.coefficients = alpha
            raise NewtonConvergenceError(
                f"no convergence in {config.max_iters} iterations (|G| = {norm:.3e})", result)
        delta = _solve_linear(system.jacobian(alpha), -G)
        zeta = 1.0
        trial = alpha + delta
        G_trial = system.residual(trial)
        norm_trial = float(np.linalg.norm(G_trial))
        if config.damping_enabled:
            while norm_trial >= (1.0 - 0.5 * zeta) * norm:
                zeta *= 0.5
                if zeta < DAMPING_FLOOR:
                    result.coefficients = alpha
                    raise DampingUnderflowError(
                        f"damping factor fell below 2^-30 at iteration {result.iterations}", result)
                trial = alpha + zeta * delta
                G_trial = system.residual(trial)
                norm_trial = float(np.linalg.norm(G_trial))
        alpha, G, norm = trial, G_trial, norm_trial
        tol = norm * config.reltol + config.abstol
        result.damping_factors.append(zeta)
        result.residual_norms.append(norm)
        result.tolerances.append(tol)
        logger.debug("newton it %d: |G| = %.3e, zeta = %g", result.iterations, norm, zeta)

    result.coefficients = alpha
    result.converged = True
    return result


def damped_newton(problem, space, basis=None, config=None, quad=None):
    """Solve the Galerkin problem on ``span(basis)`` (fine space if ``None``)."""
    return solve_newton(GalerkinSystem(problem, space, basis, quad), config)


def monotonicity_probe(problem, space, trials=100, quad=None, seed=0, amplitude=2.5):
    """Smallest ``<B(u) - B(v), u - v> / |u - v|_{H^1}^2`` over random pairs.

    ``u`` and ``v`` are random smooth fields scaled to a sup norm drawn
    uniformly from ``[0, amplitude]``, half of them shifted negative so the
    nonlinearity is active.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    system = GalerkinSystem(problem.with_data(g=0.0), space, None, quad)
    laplace = assemble_stiffness(space)

    def operator(u):
        return system.fine_stiffness @ u + system.nonlinear_vector(u)

    def sample():
        f = random_smooth_field(space, rng)
        f = f / np.abs(f).max()
        if rng.random() < 0.5:
            f = 0.5 * (f - 1.0)  # values in [-1, 0]
        return rng.uniform(0.0, amplitude) * f

    best = np.inf
    done = 0
    while done < trials:
        u, v = sample(), sample()
        w = u - v
        denom = float(w @ (laplace @ w))
        if denom <= 1e-14:
            continue
        best = min(best, float((operator(u) - operator(v)) @ w) / denom)
        done += 1
    return best


def write_history(result, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "residual_norm", "zeta"])
        writer.writerow([0, f"{result.residual_norms[0]:.6e}", ""])
        for i, (r, z) in enumerate(zip(result.residual_norms[1:], result.damping_factors), 1):
            writer.writerow([i, f"{r:.6e}", f"{z:g}"])
