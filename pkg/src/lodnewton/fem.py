"""P1 finite elements on :class:`~lodnewton.mesh.TriMesh` with homogeneous Dirichlet data.

Boundary vertices are eliminated: every assembled operator acts on interior
DOFs only.  Coefficients and sources are callables evaluated at quadrature
points, vectorised over an ``(n_points, 2)`` array.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import locate_points

__all__ = [
    "QuadratureRule",
    "composite_rule",
    "FeSpace",
    "IndefiniteCoefficientError",
    "element_coefficient_average",
    "element_stiffness",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_weighted_mass_and_volumes",
    "assemble_load",
    "prolongation",
    "h1_seminorm",
    "l2_norm",
    "h1_norm",
    "random_smooth_field",
]


class IndefiniteCoefficientError(ValueError):
    """Raised when a diffusion coefficient is not SPD at some quadrature point."""


# degree-2 three-point rule on the reference triangle (area 1/2)
_BASE_POINTS = np.array([[2 / 3, 1 / 6, 1 / 6],
                         [1 / 6, 2 / 3, 1 / 6],
                         [1 / 6, 1 / 6, 2 / 3]])
_BASE_WEIGHTS = np.full(3, 1 / 6)


@dataclass(frozen=True)
class QuadratureRule:
    """Composite quadrature on the reference triangle.

    ``points`` are barycentric coordinates, ``weights`` sum to 1/2.
    """

    points: np.ndarray
    weights: np.ndarray
    subdivision: int = 1

    @property
    def n_points(self):
        return self.weights.size


def composite_rule(subdivision=1):
    """Split the reference triangle into ``s**2`` congruent copies and apply
    the three-point rule on each."""
    s = int(subdivision)
    if s < 1:
        raise ValueError("subdivision must be >= 1")
    ref = _BASE_POINTS[:, 1:]
    corners = []
    for i in range(s):
        for j in range(s - i):
            corners.append([(i, j), (i + 1, j), (i, j + 1)])
            if i + j < s - 1:
                corners.append([(i + 1, j), (i + 1, j + 1), (i, j + 1)])
    corners = np.asarray(corners, dtype=float) / s  # (n_sub, 3, 2)
    # affine map of the base points into each sub-triangle
    origin = corners[:, 0]
    e1 = corners[:, 1] - origin
    e2 = corners[:, 2] - origin
    xy = origin[:, None, :] + ref[None, :, 0:1] * e1[:, None, :] + ref[None, :, 1:2] * e2[:, None, :]
    xy = xy.reshape(-1, 2)
    bary = np.column_stack([1.0 - xy.sum(axis=1), xy])
    weights = np.tile(_BASE_WEIGHTS, len(corners)) / s**2
    return QuadratureRule(points=bary, weights=weights, subdivision=s)


class FeSpace:
    """Conforming P1 space over the interior vertices of a mesh."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.interior_dofs = mesh.interior_vertices
        dof = np.full(mesh.n_vertices, -1, dtype=np.int64)
        dof[self.interior_dofs] = np.arange(self.interior_dofs.size)
        self.dof_of_vertex = dof

    @property
    def dimension(self):
        return self.interior_dofs.size

    def __repr__(self):
        return f"FeSpace(n={self.mesh.n}, dimension={self.dimension})"

    @cached_property
    def areas(self):
        return np.abs(self.mesh.signed_areas)

    @cached_property
    def gradients(self):
        """Gradients of the three barycentric functions, shape (T, 3, 2)."""
        p = self.mesh.vertices[self.mesh.triangles]
        x, y = p[..., 0], p[..., 1]
        two_area = 2.0 * self.mesh.signed_areas
        g = np.empty(p.shape)
        g[:, 0, 0], g[:, 0, 1] = y[:, 1] - y[:, 2], x[:, 2] - x[:, 1]
        g[:, 1, 0], g[:, 1, 1] = y[:, 2] - y[:, 0], x[:, 0] - x[:, 2]
        g[:, 2, 0], g[:, 2, 1] = y[:, 0] - y[:, 1], x[:, 1] - x[:, 0]
        return g / two_area[:, None, None]

    @cached_property
    def _coo_pattern(self):
        tris = self.mesh.triangles
        rows = np.repeat(tris, 3, axis=1).ravel()
        cols = np.tile(tris, (1, 3)).ravel()
        r = self.dof_of_vertex[rows]
        c = self.dof_of_vertex[cols]
        keep = (r >= 0) & (c >= 0)
        return r[keep], c[keep], keep

    def assemble_matrix(self, local):
        """Sum element matrices of shape (T, 3, 3) into an interior CSR matrix."""
        r, c, keep = self._coo_pattern
        n = self.dimension
        return sp.csr_matrix((local.reshape(-1)[keep], (r, c)), shape=(n, n))

    def assemble_vector(self, local):
        """Sum element vectors of shape (T, 3) into an interior vector."""
        full = np.bincount(self.mesh.triangles.ravel(), weights=local.ravel(),
                           minlength=self.mesh.n_vertices)
        return full[self.interior_dofs]

    def to_vertices(self, coefficients):
        """Extend interior coefficients by zero to all vertices."""
        full = np.zeros(self.mesh.n_vertices)
        full[self.interior_dofs] = coefficients
        return full

    def from_function(self, f):
        """Nodal interpolant of ``f`` (boundary values dropped)."""
        return np.asarray(f(self.mesh.vertices[self.interior_dofs]), dtype=float)

    def quadrature(self, quad):
        """Physical quadrature points (T, Q, 2) and weights (T, Q)."""
        p = self.mesh.vertices[self.mesh.triangles]
        points = np.einsum("qa,tad->tqd", quad.points, p)
        weights = 2.0 * self.areas[:, None] * quad.weights[None, :]
        return points, weights

    def evaluate(self, coefficients, points):
        """Point values of the FE function with the given interior coefficients."""
        tri, bary = locate_points(self.mesh, points)
        full = self.to_vertices(coefficients)
        return np.einsum("pa,pa->p", bary, full[self.mesh.triangles[tri]])


def _check_spd(values):
    a, b, c, d = values[:, 0, 0], values[:, 0, 1], values[:, 1, 0], values[:, 1, 1]
    if not np.allclose(b, c, rtol=1e-12, atol=0.0):
        raise IndefiniteCoefficientError("coefficient is not symmetric at some quadrature point")
    if np.any(a <= 0.0) or np.any(a * d - b * c <= 0.0):
        raise IndefiniteCoefficientError("coefficient is not positive definite at some quadrature point")


def element_coefficient_average(space, A=None, quad=None):
    """Quadrature mean of ``A`` over every element, shape (T, 2, 2)."""
    if A is None:
        return np.broadcast_to(np.eye(2), (space.mesh.n_triangles, 2, 2))
    quad = quad or composite_rule(1)
    points, _ = space.quadrature(quad)
    values = np.asarray(A(points.reshape(-1, 2)), dtype=float)
    _check_spd(values)
    values = values.reshape(points.shape[0], quad.n_points, 2, 2)
    return 2.0 * np.einsum("q,tqij->tij", quad.weights, values)


def element_stiffness(space, A=None, quad=None, average=None):
    """Element matrices ``int_T A grad(l_b) . grad(l_a)``, shape (T, 3, 3).

    Gradients of P1 functions are elementwise constant, so only the element
    mean of ``A`` enters; ``average`` may pass it in precomputed.
    """
    if average is None:
        average = element_coefficient_average(space, A, quad)
    g = space.gradients
    local = space.areas[:, None, None] * np.einsum("tai,tij,tbj->tab", g, average, g)
    return 0.5 * (local + local.transpose(0, 2, 1))


def assemble_stiffness(space, A=None, quad=None):
    """Stiffness matrix over interior DOFs; ``A=None`` means the identity."""
    return space.assemble_matrix(element_stiffness(space, A, quad))


def _element_mass(space, quad=None):
    quad = quad or composite_rule(1)
    phi = quad.points
    ref = np.einsum("q,qa,qb->ab", quad.weights, phi, phi) * 2.0
    return space.areas[:, None, None] * ref[None]


def assemble_mass(space, quad=None):
    return space.assemble_matrix(_element_mass(space, quad))


def _full_mass(space, quad=None):
    tris = space.mesh.triangles
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    nv = space.mesh.n_vertices
    return sp.csr_matrix((_element_mass(space, quad).ravel(), (rows, cols)), shape=(nv, nv))


def prolongation(coarse, fine, full=False):
    """Matrix of coarse hat functions evaluated at fine vertices.

    With ``full=False`` (default) rows are fine interior DOFs and columns
    coarse interior DOFs.  With ``full=True`` all vertices are kept.
    """
    tri, bary = locate_points(coarse.mesh, fine.mesh.vertices)
    rows = np.repeat(np.arange(fine.mesh.n_vertices), 3)
    cols = coarse.mesh.triangles[tri].ravel()
    vals = bary.ravel()
    keep = np.abs(vals) > 1e-14
    P = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                      shape=(fine.mesh.n_vertices, coarse.mesh.n_vertices))
    if full:
        return P
    return P[fine.interior_dofs][:, coarse.interior_dofs].tocsr()


def assemble_weighted_mass_and_volumes(coarse, fine, quad=None):
    """Coupling ``W[j, i] = int lambda_j^H lambda_i^h`` and volumes ``d[j] = int lambda_j^H``.

    Coarse hats are exactly representable on the fine mesh, so both follow
    from the fine mass matrix, which the degree-2 rule integrates exactly.
    """
    Pf = prolongation(coarse, fine, full=True)
    Mf = _full_mass(fine, quad)
    coupling = (Pf.T @ Mf).tocsr()
    volumes = np.asarray(coupling.sum(axis=1)).ravel()[coarse.interior_dofs]
    W = coupling[coarse.interior_dofs][:, fine.interior_dofs].tocsr()
    W.eliminate_zeros()
    return W, volumes


def assemble_load(space, g, quad=None):
    """Load vector ``int g lambda_j``; ``g`` may also be a constant."""
    quad = quad or composite_rule(1)
    points, weights = space.quadrature(quad)
    if callable(g):
        values = np.asarray(g(points.reshape(-1, 2)), dtype=float).reshape(weights.shape)
    else:
        values = np.full(weights.shape, float(g))
    local = np.einsum("tq,tq,qa->ta", weights, values, quad.points)
    return space.assemble_vector(local)


def _quadratic_form(matrix, c):
    c = np.asarray(c, dtype=float)
    return float(np.sqrt(max(c @ (matrix @ c), 0.0)))


def h1_seminorm(space, coefficients, stiffness=None):
    """``|v|_{H^1}``; pass a precomputed identity stiffness to avoid reassembly."""
    if stiffness is None:
        stiffness = assemble_stiffness(space)
    return _quadratic_form(stiffness, coefficients)


def l2_norm(space, coefficients, mass=None):
    if mass is None:
        mass = assemble_mass(space)
    return _quadratic_form(mass, coefficients)


def h1_norm(space, coefficients, stiffness=None, mass=None):
    """Full norm ``sqrt(||v||^2 + |v|_{H^1}^2)``."""
    return float(np.hypot(l2_norm(space, coefficients, mass),
                          h1_seminorm(space, coefficients, stiffness)))


def random_smooth_field(space, rng, max_frequency=6):
    """Nodal values of a random sine series vanishing on the boundary.

    Coefficients decay like ``1/(k + l)``; for a fixed generator state the
    same continuous function is sampled on every mesh.
    """
    x = space.mesh.vertices[space.interior_dofs]
    k = np.arange(1, max_frequency + 1)
    coef = rng.standard_normal((max_frequency, max_frequency)) / np.add.outer(k, k)
    sx = np.sin(np.pi * np.outer(x[:, 0], k))
    sy = np.sin(np.pi * np.outer(x[:, 1], k))
    return np.einsum("pk,kl,pl->p", sx, coef, sy)
