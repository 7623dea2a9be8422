import numpy as np
import pytest
import scipy.sparse.linalg as spla
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from lodnewton.fem import (FeSpace, _element_mass, _full_mass, IndefiniteCoefficientError, assemble_load, assemble_mass,
                           assemble_stiffness, assemble_weighted_mass_and_volumes, composite_rule,
                           element_coefficient_average, h1_norm, h1_seminorm, l2_norm, prolongation,
                           random_smooth_field)
from lodnewton.mesh import build_unit_square_mesh
from lodnewton.problems import oscillating_coefficient


def _sympy_reference_integral(expr):
    x, y = sympy.symbols("x y")
    return float(sympy.integrate(sympy.integrate(expr, (y, 0, 1 - x)), (x, 0, 1)))


@pytest.mark.parametrize("s", [1, 2, 4])
def test_quadrature_exact_for_quadratics(s):
    x, y = sympy.symbols("x y")
    rule = composite_rule(s)
    assert rule.weights.sum() == pytest.approx(0.5)
    assert rule.n_points == 3 * s * s
    pts = rule.points[:, 1:]
    for px in range(3):
        for py in range(3 - px):
            exact = _sympy_reference_integral(x**px * y**py)
            approx = rule.weights @ (pts[:, 0] ** px * pts[:, 1] ** py)
            assert approx == pytest.approx(exact, rel=1e-13, abs=1e-15)


def test_quadrature_subdivision_converges_for_cubics():
    x, y = sympy.symbols("x y")
    exact = _sympy_reference_integral(x**3 * y + x**4)
    errs = []
    for s in [1, 2, 4]:
        p = composite_rule(s).points[:, 1:]
        errs.append(abs(composite_rule(s).weights @ (p[:, 0] ** 3 * p[:, 1] + p[:, 0] ** 4) - exact))
    assert errs[0] > errs[1] > errs[2]


def test_invalid_subdivision():
    with pytest.raises(ValueError):
        composite_rule(0)


def test_laplace_stiffness_is_five_point_stencil():
    n = 6
    space = FeSpace(build_unit_square_mesh(n))
    K = assemble_stiffness(space).toarray()
    np.testing.assert_allclose(np.diag(K), 4.0)
    vals = np.unique(np.round(K[K != 0], 12))
    np.testing.assert_array_equal(vals, [-1.0, 4.0])
    np.testing.assert_allclose(K, K.T)


def test_element_mass_matches_sympy():
    # P1 mass on the reference triangle: area/12 * [[2,1,1],[1,2,1],[1,1,2]]
    x, y = sympy.symbols("x y")
    lam = [1 - x - y, x, y]
    ref = np.array([[_sympy_reference_integral(a * b) for b in lam] for a in lam])
    np.testing.assert_allclose(ref, (0.5 / 12) * (np.ones((3, 3)) + np.eye(3)), rtol=1e-14)
    space = FeSpace(build_unit_square_mesh(1))
    local = _element_mass(space)
    np.testing.assert_allclose(local[0], ref, rtol=1e-13)


def test_total_mass_is_area():
    space = FeSpace(build_unit_square_mesh(5))
    assert _full_mass(space).sum() == pytest.approx(1.0)


def test_constant_load_is_hat_integral():
    n = 8
    space = FeSpace(build_unit_square_mesh(n))
    # int lambda_j = |star| / 3 = 3 h^2 / 3
    np.testing.assert_allclose(assemble_load(space, 1.0), 1.0 / n**2)
    np.testing.assert_allclose(assemble_load(space, lambda x: np.full(len(x), 2.0)), 2.0 / n**2)


def test_hat_volumes_and_coupling():
    coarse, fine = FeSpace(build_unit_square_mesh(4)), FeSpace(build_unit_square_mesh(16))
    W, d = assemble_weighted_mass_and_volumes(coarse, fine)
    np.testing.assert_allclose(d, 1 / 16)
    # brute force: int lambda_j^H lambda_i^h by fine quadrature of the coarse hat
    quad = composite_rule(1)
    pts, wts = fine.quadrature(quad)
    for j in [0, 4, 8]:
        e = np.zeros(coarse.dimension)
        e[j] = 1.0
        hat = coarse.evaluate(e, pts.reshape(-1, 2)).reshape(wts.shape)
        local = np.einsum("tq,tq,qa->ta", wts, hat, quad.points)
        np.testing.assert_allclose(W[j].toarray().ravel(), fine.assemble_vector(local), atol=1e-15)


def test_prolongation_reproduces_coarse_functions(rng):
    coarse, fine = FeSpace(build_unit_square_mesh(4)), FeSpace(build_unit_square_mesh(16))
    c = rng.standard_normal(coarse.dimension)
    P = prolongation(coarse, fine)
    x = fine.mesh.vertices[fine.interior_dofs]
    np.testing.assert_allclose(P @ c, coarse.evaluate(c, x), atol=1e-14)
    assert prolongation(coarse, fine, full=True).shape == (fine.mesh.n_vertices, coarse.mesh.n_vertices)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_evaluate_is_piecewise_linear(a, b):
    space = FeSpace(build_unit_square_mesh(4))
    c = space.from_function(lambda x: 1.0 + x[:, 0] + 2 * x[:, 1])
    p = np.array([[0.25 + 0.5 * a, 0.25 + 0.5 * b]])  # inside the interior node hull
    val = space.evaluate(c, p)[0]
    # inside the closed square [1/4, 3/4]^2 every triangle has only interior vertices
    assert val == pytest.approx(1.0 + p[0, 0] + 2 * p[0, 1], abs=1e-12)


def test_poisson_convergence_rates():
    """-Laplace u = 2 pi^2 sin(pi x) sin(pi y): L2 order 2, H1 order 1."""
    def exact(x):
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    errs = []
    for n in [8, 16, 32, 64]:
        space = FeSpace(build_unit_square_mesh(n))
        K = assemble_stiffness(space)
        f = assemble_load(space, lambda x: 2 * np.pi**2 * exact(x), composite_rule(4))
        u = spla.spsolve(K.tocsc(), f)
        # compare with the interpolant on a twice finer mesh
        fine = FeSpace(build_unit_square_mesh(4 * n))
        uf = space.evaluate(u, fine.mesh.vertices[fine.interior_dofs])
        d = uf - fine.from_function(exact)
        errs.append((l2_norm(fine, d), h1_seminorm(fine, d)))
    errs = np.array(errs)
    rates = np.log2(errs[:-1] / errs[1:])
    assert np.all(rates[:, 0] > 1.9)
    assert np.all(rates[:, 1] > 0.95)


def test_norms():
    space = FeSpace(build_unit_square_mesh(8))
    v = space.from_function(lambda x: x[:, 0] * (1 - x[:, 0]) * x[:, 1] * (1 - x[:, 1]))
    assert h1_norm(space, v) == pytest.approx(np.hypot(l2_norm(space, v), h1_seminorm(space, v)))
    M = assemble_mass(space)
    assert l2_norm(space, v, M) == pytest.approx(l2_norm(space, v))


def test_coefficient_average_and_spd_check():
    space = FeSpace(build_unit_square_mesh(4))
    avg = element_coefficient_average(space, lambda x: np.broadcast_to(np.diag([2.0, 3.0]), (len(x), 2, 2)))
    np.testing.assert_allclose(avg, np.broadcast_to(np.diag([2.0, 3.0]), (32, 2, 2)))
    with pytest.raises(IndefiniteCoefficientError):
        element_coefficient_average(space, lambda x: np.broadcast_to(np.diag([1.0, -1.0]), (len(x), 2, 2)))
    with pytest.raises(IndefiniteCoefficientError):
        element_coefficient_average(space, lambda x: np.broadcast_to([[1.0, 0.5], [0.0, 1.0]], (len(x), 2, 2)))
    osc = element_coefficient_average(space, oscillating_coefficient(0.05), composite_rule(2))
    assert np.all(np.linalg.eigvalsh(osc) > 0)


def test_random_field_is_mesh_independent():
    a, b = FeSpace(build_unit_square_mesh(4)), FeSpace(build_unit_square_mesh(8))
    va = random_smooth_field(a, np.random.default_rng(7))
    vb = random_smooth_field(b, np.random.default_rng(7))
    # vertices of the coarse mesh appear in the fine one with the same values
    xa = a.mesh.vertices[a.interior_dofs]
    vb_at = b.evaluate(vb, xa)
    np.testing.assert_allclose(va, vb_at, atol=1e-13)
