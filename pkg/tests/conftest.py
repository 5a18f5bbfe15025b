import sys

import numpy as np
import pytest
from hypothesis import settings

from bclab import ModelParams

# timing varies with machine load; correctness does not
settings.register_profile("bclab", deadline=None)
settings.load_profile("bclab")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def small_params():
    return ModelParams(beta=3.0, lam=2.0, n=8)


def zscore(samples, target):
    x = np.asarray(samples, dtype=float)
    se = x.std(ddof=1) / np.sqrt(x.size)
    return (x.mean() - target) / se


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: full-size acceptance protocol (slow)")


def pytest_terminal_summary(terminalreporter):
    mod = next((m for k, m in sys.modules.items() if k.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", {})
    if results:
        terminalreporter.section("acceptance criteria")
        for res in results.values():
            terminalreporter.write_line(res.line())
