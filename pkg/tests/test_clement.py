import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lodnewton.clement import (RankDeficientPatchError, build_clement, kernel_constraint_rows,
                               measure_interpolation_stability, measure_preimage_stability)
from lodnewton.fem import FeSpace
from lodnewton.mesh import Patch, build_unit_square_mesh, nodal_patch


def test_shapes_and_volumes(clement, spaces):
    coarse, fine = spaces
    assert clement.matrix.shape == (coarse.dimension, fine.dimension)
    np.testing.assert_allclose(clement.volumes, 1 / 16)
    assert clement.prolongation.shape == (fine.dimension, coarse.dimension)


def test_row_sums_reproduce_constants(clement, spaces):
    # away from the boundary the weighted mean of 1 is 1
    coarse, fine = spaces
    ones = np.ones(fine.dimension)
    vals = clement(ones)
    x = coarse.mesh.vertices[coarse.interior_dofs]
    deep = np.all((x > 0.3) & (x < 0.7), axis=1)
    np.testing.assert_allclose(vals[deep], 1.0)


def test_coarse_gram_is_invertible(clement):
    s = np.linalg.svd(clement.coarse_gram, compute_uv=False)
    assert s.min() > 1e-10
    assert clement.coarse_gram_condition < 10


def test_kernel_dimension(clement, spaces):
    coarse, fine = spaces
    rank = np.linalg.matrix_rank(clement.matrix.toarray())
    assert fine.dimension - rank == fine.dimension - coarse.dimension


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_split_identity(clement, seed):
    v = np.random.default_rng(seed).standard_normal(clement.fine.dimension)
    c, r = clement.split(v)
    np.testing.assert_allclose(clement.prolongation @ c + r, v, atol=1e-12)
    np.testing.assert_allclose(clement(r), 0.0, atol=1e-12)


def test_coarse_inverse(clement, rng):
    c = rng.standard_normal(clement.coarse_gram.shape[0])
    np.testing.assert_allclose(clement.coarse_inverse(clement(clement.prolongation @ c)), c, atol=1e-12)


def test_constraint_rows(clement, spaces):
    coarse, fine = spaces
    patch = nodal_patch(coarse.mesh, fine.mesh, 12, 1)
    C, rows = kernel_constraint_rows(clement, patch)
    assert C.shape == (rows.size, patch.size)
    # the centre node and its six neighbours see the star
    assert rows.size == 7
    assert np.linalg.matrix_rank(C.toarray()) == rows.size


def test_rank_deficient_patch_raises(clement, spaces):
    coarse, fine = spaces
    star = nodal_patch(coarse.mesh, fine.mesh, 12, 1)
    tiny = Patch(center_vertex=12, coarse_layers=1, fine_layers=0, fine_triangles=star.fine_triangles,
                 interior_fine_vertices=star.interior_fine_vertices[:2],
                 coarse_nodes_touching=star.coarse_nodes_touching, covers_domain=False)
    with pytest.raises(RankDeficientPatchError):
        kernel_constraint_rows(clement, tiny)


def test_stability_under_refinement():
    coarse = FeSpace(build_unit_square_mesh(4))
    ratios = [measure_interpolation_stability(build_clement(coarse, FeSpace(build_unit_square_mesh(n))),
                                              trials=5)["max"] for n in (16, 32)]
    assert abs(ratios[1] / ratios[0] - 1) < 0.1
    assert max(ratios) < 2


def test_stability_validates_trials(clement):
    with pytest.raises(ValueError):
        measure_interpolation_stability(clement, trials=0)


def test_preimage(clement):
    r = measure_preimage_stability(clement)
    assert r.shape == (clement.coarse_gram.shape[0],)
    assert np.all(np.isfinite(r)) and np.all(r > 0)
