import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sparsetopo.data import FASHION_FILES, cache_root
from sparsetopo.topology import ErConfig, NetworkTopology, er_init

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training runs (minutes to hours)")


def pytest_terminal_summary(terminalreporter):
    """Collect the ``criterion N: PASS|FAIL`` lines printed by the acceptance tests."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when == "call":
                lines += [ln for ln in rep.capstdout.splitlines() if ln.startswith("criterion ")]
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda ln: int(ln.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def random_topology(rng: np.random.Generator, widths, density) -> NetworkTopology:
    """ER-style topology with an exact per-position probability, for tests."""
    seed = int(rng.integers(2**31))
    eps = density * widths[0] * widths[1] / (widths[0] + widths[1])
    return er_init(widths, ErConfig(eps, seed))


@pytest.fixture(scope="session")
def fashion_available():
    directory = cache_root() / "fashion_mnist"
    if not all((directory / name).exists() for name, _ in FASHION_FILES.values()):
        pytest.skip(f"Fashion-MNIST cache not found under {directory}")
    return directory
