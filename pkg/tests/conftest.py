import numpy as np
import pytest

from rsmpc.experiments import build_system, load_config


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("rsmpc_cache")


@pytest.fixture(scope="session")
def illustrative_cfg(cache_dir):
    return load_config("illustrative").with_overrides(
        cache={"dir": str(cache_dir), "enabled": True})


@pytest.fixture(scope="session")
def building_cfg(cache_dir):
    return load_config("building").with_overrides(
        cache={"dir": str(cache_dir), "enabled": True})


@pytest.fixture(scope="session")
def illustrative_sys(illustrative_cfg):
    """Illustrative system at alpha = 0.4, p_x = 0.8."""
    return build_system(illustrative_cfg, 0.4, 0.8)


def random_spd(rng, n, scale=1.0):
    G = rng.normal(size=(n, n))
    return scale * (G @ G.T + 0.5 * np.eye(n))


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
