import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from torusmfg import Grid, ModelSpec

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def quartic_spec():
    """H(p) = (3/4)|p|^(4/3), so L(q) = |q|^4/4, with f(m) = m."""
    return ModelSpec.power(4 / 3, 1.0)


@pytest.fixture
def quadratic_spec():
    return ModelSpec.power(2.0, 1.0)


def trig_field(grid: Grid, coeffs: np.ndarray, lead=()):
    """Real trigonometric polynomial with frequencies strictly below Nyquist.

    ``coeffs`` has shape ``lead + (2, K, ..., K)`` (cos/sin parts per mode).
    """
    K = coeffs.shape[-1]
    out = np.zeros(lead + grid.shape)
    for idx in np.ndindex(*(K,) * grid.N):
        phase = sum(2 * np.pi * k * x for k, x in zip(idx, grid.coords))
        c = np.reshape(coeffs[(...,) + (0,) + idx], lead + (1,) * grid.N)
        s = np.reshape(coeffs[(...,) + (1,) + idx], lead + (1,) * grid.N)
        out = out + c * np.cos(phase) + s * np.sin(phase)
    return out


@st.composite
def trig_fields(draw, grid: Grid, K: int = 4, scale: float = 1.0, lead=()):
    size = int(np.prod(lead + (2,) + (K,) * grid.N))
    vals = draw(st.lists(st.floats(-scale, scale, allow_nan=False), min_size=size, max_size=size))
    return trig_field(grid, np.array(vals).reshape(lead + (2,) + (K,) * grid.N), lead)


# one pass/fail line per acceptance criterion in the terminal summary
_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.failed:
        k = name.split("_")[2]
        ok = report.passed and _CRITERIA.get(k, (True,))[0]
        _CRITERIA[k] = (ok, name[len("test_criterion_") + len(k) + 1:].replace("_", " "))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, title = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {title}")
