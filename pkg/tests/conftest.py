import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sparkle.config import SceneConfig
from sparkle.scene import ScreenModel, SurfaceConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_scene():
    """4x4 screen over 24x24 facets; full rank and quick to build."""
    return SceneConfig(
        screen=ScreenModel(4, 4, 0.375),
        surface=SurfaceConfig(24, 24, (1.0, 1.0)),
    )


@pytest.fixture(scope="session")
def small_matrix(small_scene):
    return small_scene.transfer_matrix()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {line}")
