from __future__ import annotations

import dataclasses
import json
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from sphtrack.errors import ConfigError
from sphtrack.geometry import normalize
from sphtrack.measurements import angular_gain
from sphtrack.simulator import (CANNED, Scenario, ScenarioNoise, TargetSpec, canned_scenario,
                                generate_ground_truth, load_scenario, make_rng, render_camera_frame,
                                render_lidar_sweep, scenario_from_dict, simulate, sweep_crossings)

QUIET = ScenarioNoise(sigma_px=0.0, sigma_depth=0.0, sigma_aspect=0.0, dropout_prob=0.0,
                      false_positive_rate=0.0, score_std=0.0)


def scenario(*targets, **kw):
    kw.setdefault("noise", QUIET)
    return Scenario(name="t", duration=kw.pop("duration", 2.0), targets=tuple(targets), **kw)


def test_static_ground_truth():
    gt = generate_ground_truth(scenario(TargetSpec(1, "static", (3.0, 0.0, 0.0))))
    assert len(gt) == 60
    assert all(np.array_equal(r.position, [3.0, 0.0, 0.0]) for r in gt)


def test_circle_cw_quarter_turn():
    spec = TargetSpec(1, "circle_cw", radius=5.0, speed=1.0, phase=0.3)  # omega = 0.2 rad/s
    p = spec.position_at(math.pi / 0.4)
    assert math.atan2(p[1], p[0]) == pytest.approx(0.3 - math.pi / 2, abs=1e-12)
    assert np.hypot(p[0], p[1]) == pytest.approx(5.0)


def test_circle_ccw_and_radial_shapes():
    ccw = TargetSpec(1, "circle_ccw", radius=4.0, speed=0.8)
    p = ccw.position_at(math.pi / 0.4)
    assert math.atan2(p[1], p[0]) == pytest.approx(math.pi / 2, abs=1e-12)
    rad = TargetSpec(2, "radial", phase=1.0, r_min=2.0, r_max=6.0, period=8.0)
    r = np.linalg.norm(rad.position_at(np.linspace(0, 8, 801))[:, :2], axis=1)
    assert r.min() == pytest.approx(2.0, abs=1e-3) and r.max() == pytest.approx(6.0, abs=1e-3)


def test_simulation_deterministic():
    sc = canned_scenario("seq4_mixed_occlusion")
    a, b = simulate(sc, seed=11), simulate(sc, seed=11)
    for fa, fb in zip(a.frames, b.frames):
        assert fa.t == fb.t
        assert [(d.bearing.tobytes(), d.box_h, d.aspect, d.score) for d in fa.detections] == \
               [(d.bearing.tobytes(), d.box_h, d.aspect, d.score) for d in fb.detections]
        assert fa.lidar_obs == fb.lidar_obs
    c = simulate(sc, seed=12)
    assert any(len(x.detections) != len(y.detections) or
               any(not np.array_equal(d.bearing, e.bearing) for d, e in zip(x.detections, y.detections))
               for x, y in zip(a.frames, c.frames))


def test_noiseless_rendering_is_exact():
    sc = scenario(TargetSpec(1, "static", (2.0, 1.0, -0.5), height=1.6))
    pos = np.array([[2.0, 1.0, -0.5]])
    (d,) = render_camera_frame(sc, pos, 0.0, make_rng(0, 0))
    np.testing.assert_array_equal(d.bearing, normalize(pos[0]))
    r = float(np.linalg.norm(pos[0]))
    assert d.box_h == 2.0 * math.atan(1.6 / (2.0 * r)) * angular_gain(1000.0)


def test_occlusion_drops_farther_target():
    near = TargetSpec(1, "static", (2.0, 0.0, 0.0))
    far = TargetSpec(2, "static", (5.0, 0.05, 0.0))  # 0.01 rad apart
    sc = scenario(near, far, occlusion_angle=0.05)
    dets = render_camera_frame(sc, np.array([near.position, far.position]), 0.0, make_rng(0, 0))
    assert len(dets) == 1
    np.testing.assert_allclose(dets[0].bearing, [1.0, 0.0, 0.0])


def test_full_dropout_yields_nothing():
    sc = scenario(TargetSpec(1), noise=dataclasses.replace(QUIET, dropout_prob=1.0))
    assert render_camera_frame(sc, np.array([[3.0, 0.0, 0.0]]), 0.0, make_rng(0, 0)) == []


def test_lidar_static_target_once_per_sweep():
    sc = scenario(TargetSpec(1, "static", (3.0, 0.0, 0.0)), duration=5.0)
    obs = render_lidar_sweep(sc, 0.0, 4.5, make_rng(0, 1), include_start=True)
    assert [o.depth for o in obs] == [3.0] * 5
    np.testing.assert_allclose([o.t for o in obs], [0.0, 1.0, 2.0, 3.0, 4.0], atol=1e-9)


def test_lidar_quarter_sweep_time():
    sc = scenario(TargetSpec(1, "static", (0.0, 3.0, 0.0)))
    obs = render_lidar_sweep(sc, 0.0, 0.9, make_rng(0, 1))
    assert len(obs) == 1
    assert obs[0].t == pytest.approx(0.25, abs=1e-9)
    assert obs[0].azimuth == pytest.approx(math.pi / 2)


def test_lidar_moving_target_crossing_time():
    spec = TargetSpec(1, "circle_ccw", radius=4.0, speed=2.0, phase=1.0)
    sc = scenario(spec, duration=3.0)
    got = sweep_crossings(sc, spec, 0.0, 2.9)

    def offset(t):
        p = spec.position_at(t)
        return (2 * math.pi * t - math.atan2(p[1], p[0]) + math.pi) % (2 * math.pi) - math.pi

    # independent oracle: sign changes of the wrapped offset on a fine grid, refined by brentq
    ts = np.linspace(0.0, 2.9, 2901)
    vals = np.array([offset(t) for t in ts])
    ref = [brentq(offset, ts[k], ts[k + 1], xtol=1e-13)
           for k in range(len(ts) - 1) if vals[k] < 0 <= vals[k + 1]]
    assert len(got) == len(ref) == 3  # relative rate 2*pi - 0.5 rad/s over 2.9 s
    np.testing.assert_allclose(got, ref, atol=1.0 / 30.0)
    np.testing.assert_allclose(got, ref, atol=1e-9)


def test_lidar_azimuth_matches_truth_at_return_time():
    sim = simulate(canned_scenario("seq2_cw"), seed=0)
    specs = sim.scenario.targets
    obs = [o for f in sim.frames for o in f.lidar_obs]
    assert obs
    for o in obs:
        az = [math.atan2(*s.position_at(o.t)[[1, 0]]) for s in specs]
        assert min(abs((a - o.azimuth + math.pi) % (2 * math.pi) - math.pi) for a in az) < 1e-12


def test_frame_count_and_lidar_grouping():
    sim = simulate(canned_scenario("seq1_static"), seed=0)
    assert len(sim.frames) == 900
    for f in sim.frames:
        for o in f.lidar_obs:
            assert o.t <= f.t + 1e-12


@pytest.mark.parametrize("name", CANNED)
def test_canned_configs_load(name):
    sc = canned_scenario(name)
    assert sc.name == name and len(sc.targets) == 3


def test_config_errors_name_the_field(tmp_path):
    good = json.loads(json.dumps(canned_scenario("seq2_cw").to_dict()))
    bad = json.loads(json.dumps(good))
    bad["targets"][1]["radius"] = -1.0
    with pytest.raises(ConfigError, match=r"targets\[1\]\.radius"):
        scenario_from_dict(bad)
    bad = json.loads(json.dumps(good))
    bad["noise"]["dropout_prob"] = 2.0
    with pytest.raises(ConfigError, match="dropout_prob"):
        scenario_from_dict(bad)
    bad = json.loads(json.dumps(good))
    bad["targets"][0]["pattern"] = "zigzag"
    with pytest.raises(ConfigError, match=r"targets\[0\]\.pattern"):
        scenario_from_dict(bad)
    path = tmp_path / "s.json"
    path.write_text(json.dumps(good))
    assert load_scenario(path) == scenario_from_dict(good)
