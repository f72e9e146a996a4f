import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from projlearn.problem import ForwardOperator, ProblemSpec

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def diagonal_spec(dim=16, t=1.0, delta=0.0, normalization="none", **kw):
    return ProblemSpec(dim, ForwardOperator.power_law(dim, t), noise_delta=delta, kernel_normalization=normalization, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
