import numpy as np
import pytest

from bbmre.branching import OffspringDistribution
from bbmre.env import EnvSpec, constant_environment, sample_environment


@pytest.fixture
def binary():
    return OffspringDistribution.binary()


@pytest.fixture
def flat():
    return constant_environment(1.0, -60.0, 60.0)


@pytest.fixture
def rough():
    return sample_environment(EnvSpec("interpolated-iid", 0.5, 1.5, x_lo=-200.0, x_hi=200.0), 3)


def pytest_configure(config):
    np.seterr(over="ignore", under="ignore")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(results):
        ok, desc, detail = results[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {desc}" + (f"  [{detail}]" if detail else ""))
