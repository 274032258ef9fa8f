"""The numba kernels and the numpy fallback must agree; each backend runs in its own interpreter."""
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

SCRIPT = r"""
import json, numpy as np
from bbmre import _backend, pde, tilt
from bbmre.branching import OffspringDistribution, sample_maxima
from bbmre.env import EnvSpec, sample_environment
env = sample_environment(EnvSpec("interpolated-iid", 0.5, 1.5, x_lo=-150, x_hi=150), 3)
lat = sample_environment(EnvSpec("lattice-iid", 0.5, 1.5, x_lo=-150, x_hi=150), 3)
d = OffspringDistribution.binary()
x, ev = pde.solve_fkpp_rows(env, d, [-1.0, 2.0, 5.0], 6.0, times=(6.0,))
lt = pde.solve_lattice_fkpp(lat, d, [1, 4], 5.0)
init = pde.GridFunction(-30.0, 0.1, pde.heaviside(np.arange(-30, 30.001, 0.1), 1.0, 0.1))
tm = tilt.solve_b(env, -1.0, (-10.0, 10.0))
mx = sample_maxima(env, d, 0.0, 2.0, 3000, seed=1)
print(json.dumps(dict(
    backend=_backend.BACKEND,
    fkpp=ev.snapshots[0].tolist(), trace=ev.trace[:, ::50].tolist(),
    lattice=lt.trace[:, ::25].tolist(),
    pam=pde.solve_pam(env, init, 2.0).values.tolist(),
    b=tm.b.tolist(),
    mc=[float(mx.mean()), float(mx.std(ddof=1) / np.sqrt(mx.size))],
    mc_again=float(sample_maxima(env, d, 0.0, 2.0, 3000, seed=1).mean()),
)))
"""


def _run(backend):
    env = dict(os.environ, BBMRE_BACKEND=backend)
    r = subprocess.run([sys.executable, "-c", SCRIPT], capture_output=True, text=True, env=env, timeout=900)
    assert r.returncode == 0, r.stderr
    return json.loads(r.stdout.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def both():
    return _run("numba"), _run("numpy")


def test_backends_report_themselves(both):
    assert [b["backend"] for b in both] == ["numba", "numpy"]


@pytest.mark.parametrize("key", ["fkpp", "trace", "lattice", "pam", "b"])
def test_deterministic_outputs_agree(both, key):
    a, b = (np.array(r[key]) for r in both)
    assert a.shape == b.shape
    assert np.allclose(a, b, rtol=1e-10, atol=1e-11)


def test_monte_carlo_agrees_statistically(both):
    (m1, s1), (m2, s2) = both[0]["mc"], both[1]["mc"]
    assert abs(m1 - m2) <= 4 * math.hypot(s1, s2)
    for r in both:
        assert r["mc_again"] == r["mc"][0]


def test_unknown_backend_rejected():
    env = dict(os.environ, BBMRE_BACKEND="fortran")
    r = subprocess.run([sys.executable, "-c", "import bbmre"], capture_output=True, text=True, env=env)
    assert r.returncode != 0 and "BBMRE_BACKEND" in r.stderr
