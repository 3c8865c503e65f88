import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from capalloc import instance as I  # noqa: E402
from capalloc import lp  # noqa: E402


@pytest.fixture
def lp_gap():
    return I.gen_lp_gap()


@pytest.fixture
def single_edge():
    return I.BernoulliInstance(1, [I.round_spec(1.0, 1, (1.0,))])


def random_instance(seed, n=3, T=3, q=(0.3, 1.0), p=(0.2, 1.0), c=(1, 3)):
    params = I.RandomParams(n=n, T=T, c_range=c, v_range=(0.0, 1.0), q_range=q, p_range=p)
    return I.gen_random(params, seed)


def solved(inst):
    return inst, lp.solve_instance(inst)


def close(a, b, tol):
    return np.allclose(a, b, rtol=0.0, atol=tol)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for num in sorted(results):
            terminalreporter.write_line(results[num])
