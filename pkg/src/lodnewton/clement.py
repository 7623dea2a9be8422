"""Weighted Clement quasi-interpolation from the fine into the coarse P1 space.

Node ``j`` of the interpolant receives the ``lambda_j``-weighted mean of the
fine function.  The operator is stored as a sparse ``J x N`` matrix so the
kernel constraint of the corrector problems is just a row selection.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import (_element_mass, assemble_stiffness, assemble_weighted_mass_and_volumes,
                  composite_rule, element_stiffness, prolongation,
                  random_smooth_field)
from .mesh import ancestor_map

logger = logging.getLogger(__name__)

__all__ = [
    "ClementOperator",
    "RankDeficientPatchError",
    "build_clement",
    "kernel_constraint_rows",
    "measure_interpolation_stability",
    "measure_preimage_stability",
]


class RankDeficientPatchError(RuntimeError):
    """The restricted constraint matrix of a patch does not have full row rank."""


@dataclass(frozen=True, eq=False)
class ClementOperator:
    """Sparse realisation of the quasi-interpolation.

    Attributes
    ----------
    matrix : scipy.sparse.csr_matrix, shape (J, N)
    volumes : ndarray, shape (J,)
        ``int lambda_j`` for each coarse interior node.
    prolongation : scipy.sparse.csr_matrix, shape (N, J)
    coarse_gram : ndarray, shape (J, J)
        The operator restricted to the coarse space, in coordinates.
    coarse_gram_condition : float
    """

    coarse: object
    fine: object
    matrix: sp.csr_matrix
    volumes: np.ndarray
    prolongation: sp.csr_matrix
    coarse_gram: np.ndarray
    coarse_gram_condition: float

    def __call__(self, v):
        return self.matrix @ v

    def coarse_inverse(self, c):
        """Coordinates of the coarse function whose interpolant has coordinates ``c``."""
        return sla.lu_solve(self._gram_lu, c)

    @cached_property
    def _gram_lu(self):
        return sla.lu_factor(self.coarse_gram)

    def split(self, v):
        """Decompose ``v = P c + r`` with ``c`` coarse coordinates and ``I r = 0``."""
        c = self.coarse_inverse(self.matrix @ v)
        return c, v - self.prolongation @ c


def build_clement(coarse, fine, quad=None):
    """Assemble the weighted Clement operator for nested spaces."""
    W, d = assemble_weighted_mass_and_volumes(coarse, fine, quad)
    if np.any(d <= 0.0):
        raise ValueError("non-positive hat volume; the coarse mesh is corrupt")
    I = (sp.diags(1.0 / d) @ W).tocsr()
    P = prolongation(coarse, fine)
    gram = (I @ P).toarray()
    cond = float(np.linalg.cond(gram)) if gram.size else 1.0
    logger.debug("Clement coarse Gram matrix: J=%d, cond=%.3e", gram.shape[0], cond)
    return ClementOperator(coarse=coarse, fine=fine, matrix=I, volumes=d,
                           prolongation=P, coarse_gram=gram,
                           coarse_gram_condition=cond)


def kernel_constraint_rows(op, patch):
    """Rows of the operator acting on functions supported in ``patch``.

    Returns the constraint matrix (rows: touching coarse nodes with a
    nonzero restriction, columns: interior fine DOFs of the patch) and the
    coarse DOF index of each kept row.
    """
    coarse_dofs = op.coarse.dof_of_vertex[patch.coarse_nodes_touching]
    fine_dofs = op.fine.dof_of_vertex[patch.interior_fine_vertices]
    C = op.matrix[coarse_dofs][:, fine_dofs].tocsr()
    C.eliminate_zeros()
    nonzero = np.diff(C.indptr) > 0
    C = C[nonzero]
    rows = coarse_dofs[nonzero]
    if C.shape[0] > C.shape[1]:
        raise RankDeficientPatchError(
            f"patch around vertex {patch.center_vertex} has {C.shape[1]} fine DOFs "
            f"for {C.shape[0]} constraints; enlarge the patch")
    # dense rank check only for small constraint blocks; large ones fail in the saddle solve
    if 0 < C.shape[0] <= 100:
        s = np.linalg.svd(C.toarray(), compute_uv=False)
        if s[-1] <= 1e-12 * s[0]:
            raise RankDeficientPatchError(
                f"constraints on patch around vertex {patch.center_vertex} are rank deficient")
    return C, rows


def _coarse_neighbourhoods(coarse_mesh):
    """Sparse T x T matrix marking coarse triangles that share a vertex."""
    inc = coarse_mesh.incidence.astype(np.int64)
    return ((inc.T @ inc) > 0).astype(float)


def measure_interpolation_stability(op, trials=20, seed=0, include_ramp=True):
    """Empirical stability constant of the interpolation.

    For each test function ``v`` and coarse triangle ``T`` computes

        (H_T^-1 ||v - Qv||_T + ||grad(v - Qv)||_T) / ||grad v||_{omega_T}

    with ``Qv`` the interpolant seen as a fine function and ``omega_T`` the
    coarse triangles touching ``T``.  Test functions are random smooth fields
    (the same continuous functions on every fine mesh for a fixed seed) plus,
    optionally, the ramp ``x_1`` restricted to interior nodes.

    Returns
    -------
    dict with ``max``, ``mean`` and ``ratios`` (per-function maxima).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    coarse, fine = op.coarse, op.fine
    rng = np.random.default_rng(seed)
    funcs = [random_smooth_field(fine, rng) for _ in range(trials)]
    if include_ramp:
        funcs.append(fine.mesh.vertices[fine.interior_dofs, 0].copy())

    anc = ancestor_map(coarse.mesh, fine.mesh)
    n_coarse_tri = coarse.mesh.n_triangles
    neigh = _coarse_neighbourhoods(coarse.mesh)
    kmat = element_stiffness(fine)
    mmat = _element_mass(fine, composite_rule(1))
    H_T = coarse.mesh.diameter

    def per_coarse(local, v):
        vl = fine.to_vertices(v)[fine.mesh.triangles]
        e = np.einsum("ta,tab,tb->t", vl, local, vl)
        return np.bincount(anc, weights=e, minlength=n_coarse_tri)

    ratios = []
    for v in funcs:
        e = v - op.prolongation @ (op.matrix @ v)
        num = np.sqrt(per_coarse(mmat, e)) / H_T + np.sqrt(per_coarse(kmat, e))
        den = np.sqrt(neigh @ per_coarse(kmat, v))
        ok = den > 1e-14 * den.max()
        ratios.append(float(np.max(num[ok] / den[ok])))
    ratios = np.asarray(ratios)
    stats = {"max": float(ratios.max()), "mean": float(ratios.mean()), "ratios": ratios}
    logger.info("interpolation stability (H=%g, h=%g): max ratio %.4f",
                coarse.mesh.spacing, fine.mesh.spacing, stats["max"])
    return stats


def measure_preimage_stability(op, fine_stiffness=None, coarse_stiffness=None):
    """Ratio ``|v_j|_{H^1} / |lambda_j|_{H^1}`` for ``v_j = P G^-1 e_j``.

    ``v_j`` satisfies ``I v_j = e_j``.  Returns the per-node ratios.
    """
    if fine_stiffness is None:
        fine_stiffness = assemble_stiffness(op.fine)
    if coarse_stiffness is None:
        coarse_stiffness = assemble_stiffness(op.coarse)
    J = op.coarse_gram.shape[0]
    V = op.prolongation @ op.coarse_inverse(np.eye(J))
    num = np.sqrt(np.einsum("ij,ij->j", V, fine_stiffness @ V))
    den = np.sqrt(coarse_stiffness.diagonal())
    return num / den
