from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile (or load cached) numba kernels once so no timed test pays for it."""
    from sphtrack.simulator import canned_scenario, simulate
    from sphtrack.tracker import SphericalTracker

    sim = simulate(canned_scenario("seq1_static"), 0)
    trk = SphericalTracker()
    for fr in sim.frames[:40]:
        trk.step(fr)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit(rng, n=None):
    v = rng.standard_normal((3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)
