"""Correctors, the multiscale basis, and corrector decay diagnostics.

A corrector ``phi_j`` lives in the kernel of the quasi-interpolation and
makes ``lambda_j - phi_j`` A-orthogonal to that kernel.  The kernel
constraint is imposed with Lagrange multipliers, so each corrector is one
sparse saddle-point solve on its patch.

Two localisations are available:

``"nodal"``
    one corrector per coarse node, solved on the nodal patch around it;
``"element"``
    one pair of correctors per coarse element ``T`` for the unit vectors
    ``e_1, e_2`` (right-hand side ``int_T A e_i . grad w``), solved on the
    patch around ``T`` and combined with the constant gradients of the coarse
    hats.  Without truncation both give the same basis.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .clement import RankDeficientPatchError, kernel_constraint_rows
from .fem import element_coefficient_average, element_stiffness
from .mesh import (ancestor_map, domain_patch, element_patch, nodal_patch,
                   saturation_layers)

logger = logging.getLogger(__name__)

__all__ = [
    "CorrectorError",
    "Corrector",
    "MultiscaleBasis",
    "LocalizationContext",
    "solve_corrector",
    "compute_correctors",
    "build_ms_basis",
    "decay_profile",
    "fit_decay",
    "truncation_error",
    "write_decay_csv",
    "VARIANTS",
]

VARIANTS = ("nodal", "element")


class CorrectorError(RuntimeError):
    """A corrector problem failed; ``node`` is the coarse DOF (or element) index."""

    def __init__(self, node, message):
        super().__init__(f"corrector for coarse node {node}: {message}")
        self.node = node


@dataclass(frozen=True, eq=False)
class Corrector:
    node: int
    layers: float
    fine_dofs: np.ndarray
    values: np.ndarray
    energy: float
    residual: float
    n_fine: int

    def vector(self):
        out = np.zeros(self.n_fine)
        out[self.fine_dofs] = self.values
        return out


@dataclass(frozen=True, eq=False)
class MultiscaleBasis:
    """Columns ``lambda_j - phi_j`` as fine coefficient vectors (CSC, N x J)."""

    matrix: sp.csc_matrix
    correctors: sp.csc_matrix
    layers: float
    fine_layers: float
    variant: str
    coarse: object
    fine: object

    @property
    def dimension(self):
        return self.matrix.shape[1]

    def to_fine(self, alpha):
        return self.matrix @ alpha

    def corrector(self, j):
        """Fine vector of the corrector of coarse node ``j``."""
        return self.correctors[:, j].toarray().ravel()


class LocalizationContext:
    """Shared read-only data for corrector solves on one mesh pair.

    Parameters
    ----------
    clement : ClementOperator
    A : callable or None
        Diffusion coefficient (``None`` is the identity).
    quad : QuadratureRule
    """

    def __init__(self, clement, A=None, quad=None):
        self.clement = clement
        self.coarse = clement.coarse
        self.fine = clement.fine
        self.coefficient_average = element_coefficient_average(self.fine, A, quad)
        self.local_stiffness = element_stiffness(self.fine, average=self.coefficient_average)
        self.stiffness = self.fine.assemble_matrix(self.local_stiffness)
        self.ancestors = ancestor_map(self.coarse.mesh, self.fine.mesh)
        self._rhs = (self.stiffness @ clement.prolongation).tocsc()

    @property
    def ratio(self):
        return self.fine.mesh.n // self.coarse.mesh.n

    def vertex(self, j):
        return int(self.coarse.interior_dofs[j])

    def patch(self, j, k, fine_layers=None):
        """Nodal patch of coarse node ``j`` (DOF index); ``k=None`` is the whole domain."""
        if k is None:
            return domain_patch(self.coarse.mesh, self.fine.mesh, self.vertex(j))
        return nodal_patch(self.coarse.mesh, self.fine.mesh, self.vertex(j), k,
                           self.ancestors, fine_layers)

    def rhs(self, j):
        return self._rhs[:, j].toarray().ravel()

    def element_rhs(self, t):
        """Fine load vectors of ``int_T A e_i . grad w`` for ``i = 1, 2``, shape (2, N)."""
        kids = np.flatnonzero(self.ancestors == t)
        local = np.einsum("t,tij,tbj->tib", self.fine.areas[kids],
                          self.coefficient_average[kids], self.fine.gradients[kids])
        tris = self.fine.mesh.triangles[kids].ravel()
        nv = self.fine.mesh.n_vertices
        out = np.stack([np.bincount(tris, weights=local[:, i, :].ravel(), minlength=nv)
                        for i in range(2)])
        return out[:, self.fine.interior_dofs]

    def energy(self, v):
        return float(v @ (self.stiffness @ v))

    def element_energies(self, v):
        vals = self.fine.to_vertices(v)[self.fine.mesh.triangles]
        return np.einsum("ta,tab,tb->t", vals, self.local_stiffness, vals)

    @cached_property
    def saturation(self):
        return max(saturation_layers(self.coarse.mesh, v) for v in self.coarse.interior_dofs)


def _saddle_solve(ctx, patch, rhs, label):
    """Solve the kernel-constrained problem on ``patch`` for the columns of ``rhs`` (fine)."""
    fine_dofs = ctx.fine.dof_of_vertex[patch.interior_fine_vertices]
    try:
        C, _ = kernel_constraint_rows(ctx.clement, patch)
    except RankDeficientPatchError as exc:
        raise CorrectorError(label, str(exc)) from exc
    A_pp = ctx.stiffness[fine_dofs][:, fine_dofs]
    K = sp.bmat([[A_pp, C.T], [C, None]], format="csc")
    b = np.zeros((K.shape[0], rhs.shape[0]))
    b[:fine_dofs.size] = rhs[:, fine_dofs].T
    try:
        x = spla.splu(K).solve(b)
    except RuntimeError as exc:
        raise CorrectorError(label, f"singular saddle system ({exc}); enlarge the patch") from exc
    res = np.linalg.norm(K @ x - b, axis=0) / np.maximum(np.linalg.norm(b, axis=0), 1e-300)
    if not np.all(np.isfinite(res)) or res.max() > 1e-8:
        raise CorrectorError(label, f"saddle solve residual {res.max():.2e}")
    return fine_dofs, x[:fine_dofs.size].T, res


def solve_corrector(j, patch, ctx):
    """Corrector of coarse node ``j`` on ``patch``.

    Solves ``[A_pp C^T; C 0] [phi; mu] = [r; 0]`` where ``r`` is the fine
    load of ``A grad(lambda_j)`` on the patch; the multiplier is discarded.
    """
    fine_dofs, phi, res = _saddle_solve(ctx, patch, ctx.rhs(j)[None, :], j)
    phi = phi[0]
    full = np.zeros(ctx.fine.dimension)
    full[fine_dofs] = phi
    return Corrector(node=j, layers=patch.coarse_layers, fine_dofs=fine_dofs, values=phi,
                     energy=ctx.energy(full), residual=float(res[0]), n_fine=ctx.fine.dimension)


def _global_correctors(ctx, nodes):
    """Untruncated correctors from one factorisation of the global saddle system."""
    patch = domain_patch(ctx.coarse.mesh, ctx.fine.mesh, ctx.vertex(0))
    rhs = ctx._rhs[:, nodes].toarray().T
    fine_dofs, phi, res = _saddle_solve(ctx, patch, rhs, "global")
    return [Corrector(node=j, layers=np.inf, fine_dofs=fine_dofs, values=phi[i],
                      energy=ctx.energy(phi[i]), residual=float(res[i]),
                      n_fine=ctx.fine.dimension)
            for i, j in enumerate(nodes)]


def _map(fn, items, n_jobs):
    if n_jobs == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def compute_correctors(ctx, k=None, nodes=None, n_jobs=1, fine_layers=None):
    """Nodal-variant correctors for ``nodes`` (default all); ``k=None`` is global."""
    nodes = range(ctx.coarse.dimension) if nodes is None else nodes
    nodes = [int(j) for j in nodes]
    if k is None:
        return _global_correctors(ctx, nodes)
    return _map(lambda j: solve_corrector(j, ctx.patch(j, k, fine_layers), ctx), nodes, n_jobs)


def _element_corrector_matrix(ctx, k, fine_layers, n_jobs):
    coarse_mesh = ctx.coarse.mesh
    hat_grads = ctx.coarse.gradients

    def one(t):
        patch = element_patch(coarse_mesh, ctx.fine.mesh, t, k, ctx.ancestors, fine_layers)
        fine_dofs, Q, _ = _saddle_solve(ctx, patch, ctx.element_rhs(t), f"element {t}")
        rows, cols, vals = [], [], []
        for a, v in enumerate(coarse_mesh.triangles[t]):
            jd = ctx.coarse.dof_of_vertex[v]
            if jd < 0:
                continue
            rows.append(fine_dofs)
            cols.append(np.full(fine_dofs.size, jd))
            vals.append(hat_grads[t, a] @ Q)
        return rows, cols, vals

    parts = _map(one, range(coarse_mesh.n_triangles), n_jobs)
    rows = [r for p in parts for r in p[0]]
    cols = [c for p in parts for c in p[1]]
    vals = [v for p in parts for v in p[2]]
    shape = (ctx.fine.dimension, ctx.coarse.dimension)
    if not rows:
        return sp.csc_matrix(shape)
    # duplicate entries from neighbouring elements are summed
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=shape)


def _nodal_corrector_matrix(correctors, shape):
    rows = np.concatenate([c.fine_dofs for c in correctors])
    cols = np.concatenate([np.full(c.fine_dofs.size, c.node) for c in correctors])
    vals = np.concatenate([c.values for c in correctors])
    return sp.csc_matrix((vals, (rows, cols)), shape=shape)


def build_ms_basis(ctx, k=None, variant="element", n_jobs=1, fine_layers=None):
    """Multiscale basis ``lambda_j - phi_j`` for every coarse interior node.

    Parameters
    ----------
    ctx : LocalizationContext
    k : float or None
        Coarse layers of the patches; ``None`` solves the untruncated problem.
    variant : {"element", "nodal"}
    n_jobs : int
        Worker threads for the independent corrector solves.
    fine_layers : int, optional
        Patch extent in fine layers, overriding ``k * H/h``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    P = ctx.clement.prolongation.tocsc()
    if k is None:
        Phi = _nodal_corrector_matrix(compute_correctors(ctx, None), P.shape)
        layers = ell = np.inf
    elif variant == "nodal":
        Phi = _nodal_corrector_matrix(
            compute_correctors(ctx, k, n_jobs=n_jobs, fine_layers=fine_layers), P.shape)
        layers = float(k)
        ell = fine_layers if fine_layers is not None else k * ctx.ratio
    else:
        Phi = _element_corrector_matrix(ctx, k, fine_layers, n_jobs)
        layers = float(k)
        ell = fine_layers if fine_layers is not None else k * ctx.ratio
    Phi.eliminate_zeros()
    B = (P - Phi).tocsc()
    B.eliminate_zeros()
    logger.info("multiscale basis (%s): J=%d, k=%s, nnz=%d", variant, B.shape[1], layers, B.nnz)
    return MultiscaleBasis(matrix=B, correctors=Phi, layers=layers, fine_layers=float(ell),
                           variant=variant, coarse=ctx.coarse, fine=ctx.fine)


def decay_profile(j, corrector, ctx, k_max=None):
    """Relative A-energy norm of ``corrector`` outside the ``k``-layer nodal patch.

    Returns a list of ``(k, tail)`` for ``k = 1 .. k_max`` with
    ``tail = ||A^1/2 grad phi||_{Omega minus omega_k} / ||A^1/2 grad phi||_Omega``.
    ``k_max`` defaults to the saturation layer count of node ``j``.
    """
    vertex = ctx.vertex(j)
    if k_max is None:
        k_max = saturation_layers(ctx.coarse.mesh, vertex)
    e = ctx.element_energies(corrector.vector() if isinstance(corrector, Corrector) else corrector)
    total = e.sum()
    profile = []
    for k in range(1, int(k_max) + 1):
        patch = nodal_patch(ctx.coarse.mesh, ctx.fine.mesh, vertex, k, ctx.ancestors)
        inside = np.zeros(e.size, dtype=bool)
        inside[patch.fine_triangles] = True
        tail = max(float(e[~inside].sum()), 0.0)
        profile.append((k, float(np.sqrt(tail / total)) if total > 0 else 0.0))
    return profile


def fit_decay(profile):
    """Least-squares fit of ``log(tail)`` against ``k`` over positive tails.

    Returns ``(theta, slope, r2)`` with ``theta = exp(slope)`` the per-layer
    contraction factor.
    """
    ks = np.array([k for k, t in profile if t > 0], dtype=float)
    logs = np.log([t for _, t in profile if t > 0])
    if ks.size < 2:
        return np.nan, np.nan, np.nan
    slope, intercept = np.polyfit(ks, logs, 1)
    fitted = slope * ks + intercept
    ss_res = float(np.sum((logs - fitted) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(slope)), float(slope), r2


def truncation_error(global_corrector, local_corrector, ctx):
    """A-energy norm of the difference of two correctors (objects or fine vectors)."""
    if isinstance(global_corrector, Corrector) and isinstance(local_corrector, Corrector):
        if global_corrector.node != local_corrector.node:
            raise ValueError("correctors belong to different nodes")
    g = global_corrector.vector() if isinstance(global_corrector, Corrector) else global_corrector
    l = local_corrector.vector() if isinstance(local_corrector, Corrector) else local_corrector
    d = g - l
    return float(np.sqrt(max(ctx.energy(d), 0.0)))


def write_decay_csv(rows, path):
    """Write ``(node, k, tail_energy, fitted_theta)`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "k", "tail_energy", "fitted_theta"])
        for node, k, tail, theta in rows:
            writer.writerow([node, k, f"{tail:.6g}", f"{theta:.6g}"])
