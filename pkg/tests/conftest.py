import numpy as np
import pytest

from lodnewton.clement import build_clement
from lodnewton.fem import FeSpace, composite_rule
from lodnewton.lod import LocalizationContext
from lodnewton.mesh import build_unit_square_mesh
from lodnewton.problems import test_problem


def pytest_configure(config):
    # test_problem is a factory, not a test
    test_problem.__test__ = False


@pytest.fixture(scope="session")
def quad():
    return composite_rule(2)


@pytest.fixture(scope="session")
def spaces():
    """Coarse H = 1/4 and fine h = 1/16 spaces."""
    return FeSpace(build_unit_square_mesh(4)), FeSpace(build_unit_square_mesh(16))


@pytest.fixture(scope="session")
def clement(spaces):
    return build_clement(*spaces)


@pytest.fixture(scope="session")
def problem():
    return test_problem(0.25)


@pytest.fixture(scope="session")
def ctx(clement, problem, quad):
    return LocalizationContext(clement, problem.A, quad)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; assert afterwards."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def report(number, title, passed, detail):
        lines.append((number, title, bool(passed), detail))
        assert passed, f"criterion {number} ({title}) failed: {detail}"

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(lines, key=lambda x: x[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
