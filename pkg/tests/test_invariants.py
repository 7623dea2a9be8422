"""Study-level invariants of the benchmark (longer running)."""

import numpy as np
import pytest

from lodnewton.bench import ExperimentConfig, average_eoc, run_convergence


@pytest.mark.slow
def test_linear_error_is_robust_in_epsilon():
    """Halving epsilon at fixed h/epsilon changes the error constant by < 25%."""
    coarse = run_convergence(ExperimentConfig(epsilon=0.05, fine_level=6, linear=True))
    finer = run_convergence(ExperimentConfig(epsilon=0.025, fine_level=7, linear=True,
                                             fine_layers=(48, 32, 24, 16)))
    for rows in (coarse, finer):
        assert all(r.ok for r in rows)
        assert average_eoc(rows)[1] >= 0.9
    ratios = np.array([b.h1_error / a.h1_error for a, b in zip(coarse, finer)])
    assert np.all(np.abs(ratios - 1) < 0.25), ratios


def test_quadrature_doubling_is_harmless():
    rows = {s: run_convergence(ExperimentConfig(coarse_levels=(3,), quad_subdivision=s))[0]
            for s in (4, 8)}
    assert rows[8].l2_error == pytest.approx(rows[4].l2_error, rel=1e-3)
    assert rows[8].h1_error == pytest.approx(rows[4].h1_error, rel=1e-3)
