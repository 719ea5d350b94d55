import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from multirestrict.geometry import Domain, SurfacePatch, SurfaceSystem

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def cap(center, radius=0.25, family="paraboloid", n=3, **params):
    c = tuple(float(v) for v in center)
    return SurfacePatch(n, family, params, Domain(c, radius=radius))


@pytest.fixture(scope="session")
def caps():
    """Two transversal unit-paraboloid caps in R^3."""
    return SurfaceSystem((cap((-0.5, 0.0)), cap((0.5, 0.0))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance lines, printed once at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
