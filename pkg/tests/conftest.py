import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pica", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("pica")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng):
    from scipy.spatial.transform import Rotation

    return Rotation.from_rotvec(rng.normal(size=3)).as_matrix()


@pytest.fixture(scope="session")
def demo_scene(tmp_path_factory):
    """On-disk demo scene plus a fitted avatar in ``out``."""
    from pica.cli import main
    from pica.fixtures import write_demo_scene

    root = tmp_path_factory.mktemp("demo")
    paths = write_demo_scene(root, size=48, n_views=3, n_frames=4)
    assert main(["fit", "--config", str(paths["config"]), "--schedule.iterations", "3"]) == 0
    return paths


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
