"""Semi-linear model problems ``-div(A grad u) + F(x, u, grad u) = g``.

Callables take quadrature points ``x`` of shape ``(P, 2)``, state values
``xi`` of shape ``(P,)`` and gradients ``zeta`` of shape ``(P, 2)``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "SemilinearProblem",
    "test_problem",
    "saturation_profile",
    "hermite_cubic_coefficients",
    "oscillating_coefficient",
    "contrast_coefficient",
    "identity_coefficient",
    "linear_problem",
    "probe_lipschitz",
]


def _zero_scalar(x, xi, zeta):
    return np.zeros(len(xi))


def _zero_vector(x, xi, zeta):
    return np.zeros((len(xi), 2))


@dataclass(frozen=True)
class SemilinearProblem:
    """Coefficient, nonlinearity with analytic partial derivatives, and source.

    ``A(x)`` returns ``(P, 2, 2)``; ``F``, ``dF_dxi`` return ``(P,)`` and
    ``dF_dzeta`` returns ``(P, 2)``.  ``g`` is a callable or a constant.
    ``metadata`` holds the structural constants (``alpha``, ``beta``,
    ``L1``, ``L2``, ``c0``, ``poincare``) where known; ``None`` means unknown.
    """

    A: object
    g: object = 0.0
    F: object = _zero_scalar
    dF_dxi: object = _zero_scalar
    dF_dzeta: object = _zero_vector
    metadata: dict = field(default_factory=dict)
    name: str = "problem"

    @property
    def is_linear(self):
        return self.F is _zero_scalar

    def with_data(self, **changes):
        """Copy with a different source or nonlinearity but the same coefficient."""
        return replace(self, **changes)


def identity_coefficient(x):
    return np.broadcast_to(np.eye(2), (len(x), 2, 2)).copy()


def oscillating_coefficient(epsilon):
    """Diagonal coefficient oscillating in ``x_1`` with period ``epsilon``."""
    scale = 1.0 / (8.0 * np.pi**2)

    def A(x):
        c = np.cos(2.0 * np.pi * x[:, 0] / epsilon)
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = scale * 2.0 / (2.0 + c)
        out[:, 1, 1] = scale * (1.0 + 0.5 * c)
        return out

    return A


def contrast_coefficient(contrast, period=0.125):
    """Scalar coefficient switching between 1 and ``contrast`` on a checkerboard."""

    def A(x):
        cells = np.floor(x / period).astype(np.int64)
        value = np.where((cells[:, 0] + cells[:, 1]) % 2 == 0, 1.0, float(contrast))
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = value
        out[:, 1, 1] = value
        return out

    return A


def hermite_cubic_coefficients():
    """Coefficients ``(a, b, c, d)`` of the C^1 bridge between the root branch and zero."""
    u0, u1 = -1.25, -1.0
    v0 = np.sqrt(7.0 / 8.0)
    s0 = 1.0 / (4.0 * v0)
    rows = np.array([
        [u0**3, u0**2, u0, 1.0],
        [3 * u0**2, 2 * u0, 1.0, 0.0],
        [u1**3, u1**2, u1, 1.0],
        [3 * u1**2, 2 * u1, 1.0, 0.0],
    ])
    return np.linalg.solve(rows, np.array([v0, s0, 0.0, 0.0]))


_CUBIC = hermite_cubic_coefficients()


def saturation_profile(u, derivative=False):
    """Three-branch profile: ``sqrt(u/2 + 3/2)`` on ``[-3, -5/4]``, a cubic on
    ``[-5/4, -1]`` and zero above ``-1``.

    Below ``-3`` the profile is continued by zero (it is zero at ``-3``).
    """
    u = np.asarray(u, dtype=float)
    a, b, c, d = _CUBIC
    root_arg = np.maximum(0.5 * u + 1.5, 0.0)
    root = u <= -1.25
    cubic = (u > -1.25) & (u < -1.0)
    valid = u >= -3.0
    if derivative:
        positive = root_arg > 0.0
        droot = np.where(positive, 0.25 / np.sqrt(np.where(positive, root_arg, 1.0)), 0.0)
        out = np.where(root & valid, droot, 0.0)
        return np.where(cubic, 3 * a * u**2 + 2 * b * u + c, out)
    out = np.where(root & valid, np.sqrt(root_arg), 0.0)
    return np.where(cubic, ((a * u + b) * u + c) * u + d, out)


def test_problem(epsilon=0.05, linear=False):
    """Nonlinear advection-diffusion benchmark on the unit square.

    ``A`` oscillates with period ``epsilon``, the advection nonlinearity with
    period ``epsilon**1.5``; ``g = -3/10``.  With ``linear=True`` the
    nonlinearity is dropped.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    scale = 1.0 / (8.0 * np.pi**2)
    eps_f = epsilon**1.5

    def weight(x):
        return scale * (2.0 + np.cos(2.0 * np.pi * x[:, 0] / eps_f))

    def F(x, xi, zeta):
        return 0.5 * weight(x) * saturation_profile(xi) * zeta[:, 1]

    def dF_dxi(x, xi, zeta):
        return 0.5 * weight(x) * saturation_profile(xi, derivative=True) * zeta[:, 1]

    def dF_dzeta(x, xi, zeta):
        out = np.zeros((len(xi), 2))
        out[:, 1] = 0.5 * weight(x) * saturation_profile(xi)
        return out

    metadata = {
        "alpha": 0.5 * scale,
        "beta": 2.0 * scale,
        # F is Lipschitz in xi only on bounded gradients
        "L1": None,
        "L2": 0.5 * 3.0 * scale * float(np.sqrt(7.0 / 8.0)),
        "c0": None,
        "poincare": 1.0 / (np.sqrt(2.0) * np.pi),
        "epsilon": epsilon,
    }
    A = oscillating_coefficient(epsilon)
    if linear:
        return SemilinearProblem(A=A, g=-0.3, metadata=metadata, name=f"linear(eps={epsilon})")
    return SemilinearProblem(A=A, g=-0.3, F=F, dF_dxi=dF_dxi, dF_dzeta=dF_dzeta,
                             metadata=metadata, name=f"advection(eps={epsilon})")


def linear_problem(A, g=1.0, name="linear"):
    return SemilinearProblem(A=A, g=g, name=name)


def probe_lipschitz(problem, samples=2000, seed=0, xi_range=(-3.0, 1.0), zeta_bound=10.0):
    """Sample difference quotients of ``F`` in each slot and ``|F(x, 0, 0)|``.

    Returns ``dict(L1=..., L2=..., F00=...)`` with empirical maxima.
    """
    rng = np.random.default_rng(seed)
    x = rng.random((samples, 2))
    xi1, xi2 = rng.uniform(*xi_range, size=(2, samples))
    z1, z2 = rng.uniform(-zeta_bound, zeta_bound, size=(2, samples, 2))
    F = problem.F
    dxi = np.abs(xi1 - xi2)
    dz = np.linalg.norm(z1 - z2, axis=1)
    L1 = np.abs(F(x, xi1, z1) - F(x, xi2, z1)) / np.where(dxi > 0, dxi, 1.0)
    L2 = np.abs(F(x, xi1, z1) - F(x, xi1, z2)) / np.where(dz > 0, dz, 1.0)
    F00 = np.abs(F(x, np.zeros(samples), np.zeros((samples, 2))))
    return {"L1": float(L1.max()), "L2": float(L2.max()), "F00": float(F00.max())}
