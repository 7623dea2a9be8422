"""Nested structured triangulations of the unit square and nodal patches.

All meshes are Friedrichs-Keller triangulations: the square grid with spacing
``1/n`` where every cell is cut along the diagonal from its lower-left to its
upper-right corner.  Uniform red refinement of such a mesh is again a
Friedrichs-Keller mesh with half the spacing, which is what keeps point
location and ancestor lookup closed-form.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "TriMesh",
    "Patch",
    "build_unit_square_mesh",
    "refine_uniform",
    "locate_points",
    "ancestor_map",
    "nodal_patch",
    "element_patch",
    "domain_patch",
    "saturation_layers",
    "write_mesh",
]


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Structured triangulation of ``(0, 1)^2``.

    Attributes
    ----------
    n : int
        Number of grid cells per side; the grid spacing is ``1/n``.
    vertices : ndarray, shape (n_vertices, 2)
    triangles : ndarray, shape (n_triangles, 3)
        Counterclockwise vertex triples.
    boundary_vertex_flags : ndarray of bool, shape (n_vertices,)
    level : int
        Number of refinements applied to the root mesh.
    parent_map : ndarray or None
        Index of the parent triangle in the mesh one level coarser.
    """

    n: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertex_flags: np.ndarray
    level: int = 0
    parent_map: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def spacing(self):
        return 1.0 / self.n

    @property
    def diameter(self):
        """Element diameter ``sqrt(2)/n``."""
        return np.sqrt(2.0) / self.n

    @property
    def interior_vertices(self):
        return np.flatnonzero(~self.boundary_vertex_flags)

    @cached_property
    def incidence(self):
        """Sparse vertex-by-triangle incidence matrix (CSR, 0/1 entries)."""
        t = self.n_triangles
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(t), 3)
        data = np.ones(rows.size, dtype=np.int8)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_vertices, t))

    @cached_property
    def vertex_to_triangles(self):
        inc = self.incidence
        return [inc.indices[inc.indptr[v]:inc.indptr[v + 1]] for v in range(self.n_vertices)]

    @cached_property
    def signed_areas(self):
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def grow_triangle_layer(self, tri_mask):
        """Add every triangle sharing a vertex with the marked triangles."""
        touched = (self.incidence @ tri_mask.astype(np.int8)) > 0
        return (self.incidence.T @ touched.astype(np.int8)) > 0


def build_unit_square_mesh(n):
    """Friedrichs-Keller triangulation with ``n`` cells per side.

    Examples
    --------
    >>> m = build_unit_square_mesh(4)
    >>> m.n_vertices, m.n_triangles, m.interior_vertices.size
    (25, 32, 9)
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"need at least one cell per side, got n={n}")
    ticks = np.arange(n + 1) / n
    xx, yy = np.meshgrid(ticks, ticks)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    a = j * (n + 1) + i
    b = a + 1
    c = a + n + 2
    d = a + n + 1
    # triangle 2*cell is below the diagonal, 2*cell+1 above it
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([a, b, c])
    triangles[1::2] = np.column_stack([a, c, d])

    x, y = vertices[:, 0], vertices[:, 1]
    boundary = (x == 0.0) | (x == 1.0) | (y == 0.0) | (y == 1.0)
    return TriMesh(n=n, vertices=vertices, triangles=triangles,
                   boundary_vertex_flags=boundary)


def _locate(n, points):
    """Return (triangle index, barycentric coords) for points in [0,1]^2."""
    points = np.asarray(points, dtype=float)
    s = points * n
    ij = np.clip(np.floor(s).astype(np.int64), 0, n - 1)
    fx = s[:, 0] - ij[:, 0]
    fy = s[:, 1] - ij[:, 1]
    cell = ij[:, 1] * n + ij[:, 0]
    lower = fx >= fy
    tri = 2 * cell + (~lower)
    bary = np.where(
        lower[:, None],
        np.column_stack([1.0 - fx, fx - fy, fy]),
        np.column_stack([1.0 - fy, fx, fy - fx]),
    )
    return tri, bary


def locate_points(mesh, points):
    """Find the containing triangle and barycentric coordinates of points.

    Points on shared edges are assigned to one of the adjacent triangles;
    the barycentric coordinates are ordered like ``mesh.triangles[tri]``.
    """
    points = np.atleast_2d(points)
    if np.any(points < 0.0) or np.any(points > 1.0):
        raise ValueError("points must lie in the closed unit square")
    return _locate(mesh.n, points)


def ancestor_map(coarse, fine):
    """Index of the coarse triangle containing each fine triangle."""
    if fine.n % coarse.n:
        raise ValueError(f"mesh with n={fine.n} is not a refinement of n={coarse.n}")
    centroids = fine.vertices[fine.triangles].mean(axis=1)
    return _locate(coarse.n, centroids)[0]


def refine_uniform(mesh, levels=1):
    """Uniformly refine ``levels`` times (each triangle into four)."""
    levels = int(levels)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    current = mesh
    for _ in range(levels):
        child = build_unit_square_mesh(2 * current.n)
        parent = ancestor_map(current, child)
        current = TriMesh(n=child.n, vertices=child.vertices, triangles=child.triangles,
                          boundary_vertex_flags=child.boundary_vertex_flags,
                          level=current.level + 1, parent_map=parent)
    return current


@dataclass(frozen=True, eq=False)
class Patch:
    """Nodal patch around a coarse vertex, resolved on the fine mesh.

    ``coarse_layers`` may be a half-integer; ``fine_layers`` is the same
    extent measured in fine element layers (``coarse_layers * H / h``).
    """

    center_vertex: int
    coarse_layers: float
    fine_layers: float
    fine_triangles: np.ndarray
    interior_fine_vertices: np.ndarray
    coarse_nodes_touching: np.ndarray
    covers_domain: bool

    @property
    def size(self):
        return self.interior_fine_vertices.size


def _check_layers(k, minimum):
    k = float(k)
    if k < minimum or (2.0 * k) != np.floor(2.0 * k):
        raise ValueError(f"layer count must be >= {minimum} in steps of 0.5, got {k}")
    return k


def _fine_layer_count(k, fine_layers, ratio):
    if fine_layers is None:
        return int(round(k * ratio))
    fine_layers = int(fine_layers)
    if fine_layers < 0:
        raise ValueError("fine_layers must be non-negative")
    return fine_layers


def _grow(coarse, fine, coarse_mask, fine_layers, ratio, ancestors):
    """Grow a coarse seed by ``fine_layers`` fine element layers.

    On these meshes ``H/h`` fine layers add exactly one coarse layer, so whole
    coarse layers are grown on the coarse mesh and only the rest on the fine one.
    """
    for _ in range(fine_layers // ratio):
        coarse_mask = coarse.grow_triangle_layer(coarse_mask)
    fine_mask = coarse_mask[ancestors]
    for _ in range(fine_layers % ratio):
        fine_mask = fine.grow_triangle_layer(fine_mask)
    return fine_mask


def coarse_layer_mask(coarse, j, m):
    """Boolean mask of coarse triangles in the ``m``-layer patch around vertex ``j``."""
    mask = np.zeros(coarse.n_triangles, dtype=bool)
    mask[coarse.vertex_to_triangles[j]] = True
    for _ in range(int(m) - 1):
        mask = coarse.grow_triangle_layer(mask)
    return mask


def nodal_patch(coarse, fine, j, k, ancestors=None, fine_layers=None):
    """Patch of ``k`` coarse layers around the interior coarse vertex ``j``.

    ``k = 1`` is ``supp lambda_j``; every further integer step adds the coarse
    elements sharing a vertex with the patch.  A trailing half layer is
    ``H/(2h)`` layers of fine elements.  The extent is recorded in fine
    layers, ``k * H/h`` unless ``fine_layers`` overrides it.

    Parameters
    ----------
    coarse, fine : TriMesh
        ``fine`` must refine ``coarse``.
    j : int
        Coarse vertex index (not a DOF index).
    k : float
        Layer count, ``>= 1`` in steps of 0.5.
    ancestors : ndarray, optional
        Precomputed ``ancestor_map(coarse, fine)``.
    fine_layers : int, optional
        Patch extent in fine layers, counting ``supp lambda_j`` as ``H/h``.
    """
    k = _check_layers(k, 1.0)
    j = int(j)
    if j < 0 or j >= coarse.n_vertices or coarse.boundary_vertex_flags[j]:
        raise ValueError(f"vertex {j} is not an interior coarse vertex")
    if ancestors is None:
        ancestors = ancestor_map(coarse, fine)
    ratio = fine.n // coarse.n
    ell = _fine_layer_count(k, fine_layers, ratio)
    if ell < ratio:
        raise ValueError("a nodal patch contains at least supp lambda_j")
    seed = coarse_layer_mask(coarse, j, 1)
    fine_mask = _grow(coarse, fine, seed, ell - ratio, ratio, ancestors)
    return _patch_from_fine_mask(coarse, fine, j, k, ell, fine_mask, ancestors)


def element_patch(coarse, fine, t, k, ancestors=None, fine_layers=None):
    """Patch of ``k`` layers around the coarse triangle ``t``.

    ``k = 0`` is the triangle itself; otherwise as :func:`nodal_patch`.
    """
    k = _check_layers(k, 0.0)
    if ancestors is None:
        ancestors = ancestor_map(coarse, fine)
    ratio = fine.n // coarse.n
    ell = _fine_layer_count(k, fine_layers, ratio)
    seed = np.zeros(coarse.n_triangles, dtype=bool)
    seed[int(t)] = True
    fine_mask = _grow(coarse, fine, seed, ell, ratio, ancestors)
    return _patch_from_fine_mask(coarse, fine, int(t), k, ell, fine_mask, ancestors)


def _patch_from_fine_mask(coarse, fine, center, k, fine_layers, fine_mask, ancestors):
    fine_tris = np.flatnonzero(fine_mask)
    # a vertex is inside the patch iff all its triangles are
    inc = fine.incidence
    n_inside = inc @ fine_mask.astype(np.int64)
    n_total = np.diff(inc.indptr)
    inside = (n_inside == n_total) & ~fine.boundary_vertex_flags
    touched_coarse = np.zeros(coarse.n_triangles, dtype=bool)
    touched_coarse[ancestors[fine_tris]] = True
    nodes = np.unique(coarse.triangles[touched_coarse])
    nodes = nodes[~coarse.boundary_vertex_flags[nodes]]
    return Patch(
        center_vertex=center,
        coarse_layers=k,
        fine_layers=fine_layers,
        fine_triangles=fine_tris,
        interior_fine_vertices=np.flatnonzero(inside),
        coarse_nodes_touching=nodes,
        covers_domain=bool(fine_mask.all()),
    )


def write_mesh(mesh, path):
    """Dump a mesh as plain text: vertex lines ``x y`` then triangle lines ``i j k``."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def domain_patch(coarse, fine, j):
    """Patch around coarse vertex ``j`` that covers the whole domain."""
    return Patch(
        center_vertex=int(j),
        coarse_layers=np.inf,
        fine_layers=np.inf,
        fine_triangles=np.arange(fine.n_triangles),
        interior_fine_vertices=fine.interior_vertices,
        coarse_nodes_touching=coarse.interior_vertices,
        covers_domain=True,
    )


def saturation_layers(coarse, j):
    """Smallest integer layer count whose patch around ``j`` is the whole mesh."""
    mask = np.zeros(coarse.n_triangles, dtype=bool)
    mask[coarse.vertex_to_triangles[j]] = True
    k = 1
    while not mask.all():
        mask = coarse.grow_triangle_layer(mask)
        k += 1
    return k

