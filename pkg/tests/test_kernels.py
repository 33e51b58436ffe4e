"""Compiled kernels against the numpy routines they replace."""

from __future__ import annotations

import numpy as np
import pytest

from sphtrack import kernels
from sphtrack.association import cost_arrays, cost_arrays_compiled
from sphtrack.assignment import hungarian
from sphtrack.filter import finalize_arrays, predict_arrays, update_rows_arrays
from sphtrack.geometry import EPS_SMALL, exp_map, make_tangent_basis
from sphtrack.measurements import MeasurementNoise
from sphtrack.simulator import canned_scenario, simulate
from sphtrack.state import ASPECT, BOX_H, DEPTH, ProcessNoise
from sphtrack.tracker import SphericalTracker, TrackerConfig

from conftest import random_unit

pytestmark = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")


def random_bank(rng, n):
    g = random_unit(rng, n)
    basis = make_tangent_basis(g)
    x = rng.normal(0.0, 0.3, (n, 10))
    x[:, :2] = rng.normal(0.0, 0.02, (n, 2))
    x[:, ASPECT] = rng.uniform(0.3, 0.6, n)
    x[:, BOX_H] = rng.uniform(100, 500, n)
    x[:, DEPTH] = rng.uniform(1.0, 8.0, n)
    A = rng.normal(0.0, 0.1, (n, 10, 10))
    P = A @ np.swapaxes(A, 1, 2) + 1e-3 * np.eye(10)
    return x, P, g, basis


def test_tangent_basis_kernel(rng):
    out = np.empty((3, 2))
    for g in random_unit(rng, 300):
        kernels._tangent_basis(g[0], g[1], g[2], out)
        np.testing.assert_allclose(out, make_tangent_basis(g), atol=1e-14)


@pytest.mark.parametrize("dt", [0.0, 1 / 30, 0.5])
def test_predict_kernel(rng, dt):
    q = ProcessNoise()
    x, P, _, _ = random_bank(rng, 7)
    xr, Pr = predict_arrays(x, P, dt, q)
    kernels.predict_kernel(x, P, dt, np.array(q.per_pair()))
    np.testing.assert_allclose(x, xr, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(P, Pr, rtol=1e-11, atol=1e-12)


def test_cost_kernel(rng):
    noise = MeasurementNoise()
    for _ in range(30):
        n, m = rng.integers(1, 8, 2)
        x, P, g, basis = random_bank(rng, n)
        src = rng.integers(0, n, m)
        g_det = exp_map(g[src], basis[src], rng.normal(0.0, 0.02, (m, 2)))
        aspect = rng.uniform(0.3, 0.6, m)
        box_h = rng.uniform(50, 600, m)
        box_h[0] = 1.0  # below the usable height: infeasible in both routes
        h_est = rng.uniform(1.5, 1.9, n)
        h_var = rng.uniform(1e-3, 0.1, n)
        ref = cost_arrays(x, P, g, basis, h_est, h_var, g_det, aspect, box_h, noise=noise)
        got = cost_arrays_compiled(x, P, g, basis, h_est, h_var, g_det, aspect, box_h, noise=noise)
        np.testing.assert_array_equal(got.feasible, ref.feasible)
        ok = ref.feasible
        np.testing.assert_allclose(got.cost[ok], ref.cost[ok], rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(got.d2, ref.d2, rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(got.iou[ok], ref.iou[ok], atol=1e-10)
        np.testing.assert_allclose(got.w, ref.w, atol=1e-12)
        np.testing.assert_allclose(got.depth, ref.depth, rtol=1e-12)
        np.testing.assert_allclose(got.depth_var, ref.depth_var, rtol=1e-10)


def test_update_kernel(rng):
    rows = np.array([0, 1, 4, 8, 6, 8])
    for _ in range(30):
        n = int(rng.integers(1, 8))
        x, P, _, _ = random_bank(rng, n)
        sel = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        k = sel.size
        z = x[sel][:, rows] + rng.normal(0.0, 0.1, (k, 6))
        mask = rng.random((k, 6)) < 0.7
        r = rng.uniform(1e-3, 0.5, (k, 6))
        xr, Pr = x.copy(), P.copy()
        xr[sel], Pr[sel] = update_rows_arrays(x[sel], P[sel], z, rows, mask, r)
        assert kernels.update_kernel(x, P, sel, z, rows, mask, r, 1e-9) == 0
        np.testing.assert_allclose(x, xr, rtol=1e-9, atol=1e-10)
        np.testing.assert_allclose(P, Pr, rtol=1e-8, atol=1e-11)


def test_finalize_kernel(rng):
    x, P, g, basis = random_bank(rng, 9)
    xr, Pr, gr, br = finalize_arrays(x, P, g, basis)
    assert kernels.finalize_kernel(x, P, g, basis, EPS_SMALL) == -1
    np.testing.assert_allclose(x, xr, atol=1e-12)
    np.testing.assert_allclose(P, Pr, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(g, gr, atol=1e-14)
    np.testing.assert_allclose(basis, br, atol=1e-13)


def test_finalize_kernel_flags_chart_overflow(rng):
    x, P, g, basis = random_bank(rng, 3)
    x[1, 0] = 4.0  # beyond pi
    assert kernels.finalize_kernel(x, P, g, basis, EPS_SMALL) == 1


@pytest.mark.parametrize("name", ["seq2_cw", "seq4_mixed_occlusion"])
def test_tracker_compiled_equals_numpy(name):
    sim = simulate(canned_scenario(name), seed=3)
    frames = sim.frames[:300]
    fast = SphericalTracker(TrackerConfig(compiled=True))
    slow = SphericalTracker(TrackerConfig(compiled=False))
    for fr in frames:
        a, b = fast.step(fr), slow.step(fr)
        assert [o.id for o in a] == [o.id for o in b]
        for oa, ob in zip(a, b):
            np.testing.assert_allclose(oa.position, ob.position, atol=1e-7)


def test_hungarian_potentials_certify_optimality(rng):
    for _ in range(200):
        n = int(rng.integers(1, 10))
        a = rng.random((n, n))
        match, u, v = hungarian(a)
        reduced = a - u[:, None] - v[None, :]
        assert reduced.min() >= -1e-12
        np.testing.assert_allclose(reduced[np.arange(n), match], 0.0, atol=1e-12)
        assert sorted(match.tolist()) == list(range(n))
