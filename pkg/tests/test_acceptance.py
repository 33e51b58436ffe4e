"""Acceptance criteria 1-10, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines bypass
output capture so they appear in the normal log.
"""

from __future__ import annotations

import itertools
import json
import math
import time

import numpy as np
import pytest

from sphtrack.association import matching_cost, solve_assignment
from sphtrack.cli import main
from sphtrack.filter import finalize_arrays, kalman_update, predict_arrays, update_rows_arrays
from sphtrack.geometry import exp_map, log_map, make_tangent_basis
from sphtrack.measurements import (CameraDetection, LidarDepthObs, depth_from_box,
                                   height_obs_from_depth, image_measurement, joint_measurement,
                                   joint_parts, lidar_measurement)
from sphtrack.metrics import coverage, evaluate, match_tracks_to_gt, planar_rmse
from sphtrack.simulator import DYNAMIC, canned_scenario, simulate
from sphtrack.state import ASPECT, BOX_H, DEPTH, ProcessNoise, TrackHypothesis
from sphtrack.tracker import SphericalTracker
from sphtrack.baseline import PixelTracker

from conftest import random_unit

SEED = 2024


@pytest.fixture
def verdict(capsys):
    def report(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return report


def run_ids(tracker, frames):
    outs = []
    for fr in frames:
        outs.extend(tracker.step(fr))
    return outs


def test_criterion_01_geometry_round_trip(verdict):
    rng = np.random.default_rng(SEED)
    n = 100_000
    t0 = time.perf_counter()
    g = random_unit(rng, n)
    B = make_tangent_basis(g)
    direction = rng.standard_normal((n, 2))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    w = direction * rng.uniform(0.0, math.pi - 0.1, (n, 1))
    err = np.linalg.norm(log_map(g, B, exp_map(g, B, w)) - w, axis=1).max()
    elapsed = time.perf_counter() - t0
    verdict(1, err <= 1e-9 and elapsed < 5.0,
            f"max |log(exp(w)) - w| = {err:.2e} (<= 1e-9) over {n} pairs in {elapsed:.2f} s (< 5 s)")


def test_criterion_02_joint_equals_sequential(verdict):
    rng = np.random.default_rng(SEED)
    worst_x = worst_p = 0.0
    trials = 10_000
    for _ in range(trials):
        g = random_unit(rng)
        x = np.zeros(10)
        x[:2] = rng.uniform(-0.05, 0.05, 2)
        x[2:4] = rng.uniform(-0.2, 0.2, 2)
        x[ASPECT], x[BOX_H], x[DEPTH] = rng.uniform(0.3, 0.6), rng.uniform(100, 600), rng.uniform(1, 8)
        A = rng.standard_normal((10, 10))
        P = 0.01 * (A @ A.T / 10 + 0.1 * np.eye(10))
        trk = TrackHypothesis(1, x, P, g, make_tangent_basis(g), rng.uniform(1.5, 1.9), 0.01)
        t = 3.0
        det = CameraDetection(t, exp_map(g, trk.basis, rng.uniform(-0.05, 0.05, 2)),
                              x[ASPECT] + 0.05 * rng.standard_normal(),
                              float(np.clip(x[BOX_H] + 20 * rng.standard_normal(), 50, 900)))
        obs = LidarDepthObs(t + rng.uniform(-0.004, 0.004), 0.0, x[DEPTH] + 0.3 * rng.standard_normal(), 0.05)
        img, lid = image_measurement(det, trk), lidar_measurement(obs, trk)
        joint_pkt = joint_measurement(img, lid)
        assert joint_pkt.z.shape == (5,)
        img_part, lidar_part = joint_parts(img, lid)
        joint = kalman_update(trk, joint_pkt)
        seq = kalman_update(kalman_update(trk, img_part), lidar_part)
        worst_x = max(worst_x, np.abs(joint.x - seq.x).max())
        worst_p = max(worst_p, np.abs(joint.P - seq.P).max())
    verdict(2, worst_x <= 1e-9 and worst_p <= 1e-9,
            f"max state diff {worst_x:.2e}, max covariance diff {worst_p:.2e} (<= 1e-9) over {trials} trials")


def test_criterion_03_assignment_optimality(verdict):
    rng = np.random.default_rng(SEED)
    perms = {}
    mismatches = 0
    for k in range(1000):
        n, m = (int(v) for v in rng.integers(1, 8, 2))
        # every third matrix has integer costs, so many optima tie exactly
        c = rng.integers(0, 5, (n, m)).astype(float) if k % 3 == 0 else rng.random((n, m))
        rows_first = n <= m
        a = c if rows_first else c.T
        key = a.shape
        if key not in perms:
            perms[key] = np.array(list(itertools.permutations(range(key[1]), key[0])))
        P = perms[key]
        brute = a[np.arange(key[0]), P].sum(axis=1).min()
        pairs = solve_assignment(c)
        got = c[[i for i, _ in pairs], [j for _, j in pairs]]
        got = got[np.argsort([i for i, _ in pairs] if rows_first else [j for _, j in pairs])].sum()
        if len(pairs) != min(n, m) or got != brute:
            mismatches += 1
    verdict(3, mismatches == 0, f"{mismatches} of 1000 random matrices (1x1 .. 7x7) differ from brute force")


def test_criterion_04_depth_round_trip(verdict):
    rng = np.random.default_rng(SEED)
    h = rng.uniform(2.0 + 1e-9, 1000.0, 10_000)
    hh = rng.uniform(0.5, 2.5, 10_000)
    err = max(abs(height_obs_from_depth(depth_from_box(a, b, 1000.0), b, 1000.0) - a) for a, b in zip(h, hh))
    verdict(4, err <= 1e-12, f"max |h' - h| = {err:.2e} px (<= 1e-12) over 10000 box heights")


def test_criterion_05_static_accuracy(verdict):
    t0 = time.perf_counter()
    sim = simulate(canned_scenario("seq1_static"), seed=SEED)
    outs = run_ids(SphericalTracker(), sim.frames)
    ev = evaluate(outs, sim.ground_truth)
    elapsed = time.perf_counter() - t0
    rmse = ev["rmse_m"]
    ok = (all(v is not None and v <= 0.15 for v in rmse.values())
          and ev["id_switches_total"] == 0 and elapsed < 10.0)
    verdict(5, ok, f"RMSE {', '.join(f'{v:.3f}' for v in rmse.values())} m (<= 0.15), "
                   f"{ev['id_switches_total']} switches, {elapsed:.2f} s (< 10 s)")


def test_criterion_06_representation_benefit(verdict):
    totals = {"spherical": 0, "pixel": 0}
    for name in DYNAMIC:
        sim = simulate(canned_scenario(name), seed=SEED)
        for engine, cls in (("spherical", SphericalTracker), ("pixel", PixelTracker)):
            totals[engine] += evaluate(run_ids(cls(), sim.frames), sim.ground_truth)["max_id_total"]
    seam = simulate(canned_scenario("seam_crossing"), seed=SEED)
    sw_sph = evaluate(run_ids(SphericalTracker(), seam.frames), seam.ground_truth)["id_switches_total"]
    sw_pix = evaluate(run_ids(PixelTracker(), seam.frames), seam.ground_truth)["id_switches_total"]
    ratio = totals["spherical"] / totals["pixel"]
    ok = ratio <= 0.5 and sw_pix >= 1 and sw_sph == 0
    verdict(6, ok, f"distinct ids spherical {totals['spherical']} vs pixel {totals['pixel']} "
                   f"(ratio {ratio:.3f} <= 0.5); seam switches pixel {sw_pix} (>= 1), spherical {sw_sph} (0)")


def test_criterion_07_dynamic_robustness(verdict):
    worst_rmse, worst_cov = 0.0, 1.0
    for name in DYNAMIC:
        sim = simulate(canned_scenario(name), seed=SEED)
        m = match_tracks_to_gt(run_ids(SphericalTracker(), sim.frames), sim.ground_truth)
        worst_rmse = max(worst_rmse, max(planar_rmse(m).values()))
        worst_cov = min(worst_cov, min(coverage(m).values()))
    verdict(7, worst_rmse <= 0.4 and worst_cov >= 0.9,
            f"worst per-target RMSE {worst_rmse:.3f} m (<= 0.4), worst coverage {worst_cov:.3f} (>= 0.9)")


def test_criterion_08_numerical_hygiene(verdict):
    rng = np.random.default_rng(SEED)
    n_tracks, n_cycles = 1000, 100
    q = ProcessNoise()
    g = random_unit(rng, n_tracks)
    basis = make_tangent_basis(g)
    x = np.zeros((n_tracks, 10))
    x[:, ASPECT], x[:, BOX_H], x[:, DEPTH] = 0.4, 300.0, 4.0
    P = np.tile(np.diag([1e-5, 1e-5, 0.09, 0.09, 0.0025, 0.01, 4.0, 2500.0, 0.4, 1.0]), (n_tracks, 1, 1))
    rows = np.array([0, 1, 4, 8, 6, 8])
    r_base = np.array([1e-5, 1e-5, 0.0025, 0.04, 4.0, 0.0025])
    worst_asym = 0.0
    worst_eig = np.inf
    for _ in range(n_cycles):
        x, P = predict_arrays(x, P, float(rng.uniform(0.0, 0.1)), q)
        mask = rng.random((n_tracks, 6)) < 0.7
        r = r_base * rng.uniform(0.5, 2.0, (n_tracks, 6))
        z = x[:, rows] + np.sqrt(r) * rng.standard_normal((n_tracks, 6))
        x, P = update_rows_arrays(x, P, z, rows, mask, r)
        worst_asym = max(worst_asym, np.abs(P - np.swapaxes(P, 1, 2)).max())
        worst_eig = min(worst_eig, np.linalg.eigvalsh(P).min())
        x, P, g, basis = finalize_arrays(x, P, g, basis)
    verdict(8, worst_asym <= 1e-12 and worst_eig >= -1e-12,
            f"{n_tracks * n_cycles} cycles: max |P - P^T| = {worst_asym:.1e} (<= 1e-12), "
            f"min eigenvalue {worst_eig:.2e} (>= -1e-12)")


def test_criterion_09_latency(verdict, tmp_path, capsys):
    assert main(["bench", "--steps", "10000", "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    stats = json.loads((tmp_path / "manifest.json").read_text())["timing"]["per_step"]
    verdict(9, stats["median_ms"] < 1.0 and stats["n_steps"] == 10_000,
            f"median step {stats['median_ms']:.3f} ms (< 1 ms), p90 {stats['p90_ms']:.3f} ms, "
            f"p99 {stats['p99_ms']:.3f} ms; 10 tracks x 20 detections, {stats['n_steps']} steps, in manifest")


def test_criterion_10_compare_determinism(verdict, tmp_path, capsys):
    trees = []
    for d in ("first", "second"):
        assert main(["compare", "--seed", str(SEED), "--out", str(tmp_path / d)]) == 0
        root = tmp_path / d
        trees.append({str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    capsys.readouterr()
    same = trees[0] == trees[1]
    verdict(10, same and len(trees[0]) > 3,
            f"two compare runs with seed {SEED}: {len(trees[0])} files, byte-identical={same}")
