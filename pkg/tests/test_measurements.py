from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sphtrack.errors import DegenerateBoxError, SyncError
from sphtrack.geometry import exp_map, make_tangent_basis
from sphtrack.measurements import (H_IMG, H_JOINT, H_LIDAR, CameraDetection, LidarDepthObs,
                                   MeasurementNoise, depth_from_box, height_obs_from_depth,
                                   image_measurement, joint_measurement, lidar_measurement)
from sphtrack.state import ASPECT, BOX_H, DEPTH, W1, W2, TrackHypothesis

# 0.85 / tan(pi / 8), evaluated with 40-digit arithmetic
DEPTH_AT_500PX = 2.052081528017130791
# expected box height at 2.0523 m for a 1.7 m target, 40-digit arithmetic
HEIGHT_AT_2_0523M = 499.9520788975468777


def make_track(g=(1.0, 0.0, 0.0), height=1.7, height_var=0.0):
    g = np.asarray(g, dtype=float)
    g /= np.linalg.norm(g)
    x = np.zeros(10)
    x[ASPECT], x[BOX_H], x[DEPTH] = 0.4, 300.0, 3.0
    return TrackHypothesis(1, x, np.eye(10), g, make_tangent_basis(g), height, height_var)


def test_depth_full_image_height():
    assert depth_from_box(1000.0, 1.7, 1000.0) == pytest.approx(0.85, abs=1e-12)


def test_depth_half_image_height():
    assert depth_from_box(500.0, 1.7, 1000.0) == pytest.approx(DEPTH_AT_500PX, abs=1e-12)
    # the rounded reference value quoted for this case
    assert depth_from_box(500.0, 1.7, 1000.0) == pytest.approx(2.0523, abs=5e-4)


def test_degenerate_box():
    with pytest.raises(DegenerateBoxError):
        depth_from_box(1.0, 1.7, 1000.0)
    with pytest.raises(DegenerateBoxError):
        depth_from_box(2.0, 1.7, 1000.0)


def test_height_obs_inverse_of_example():
    assert height_obs_from_depth(DEPTH_AT_500PX, 1.7, 1000.0) == pytest.approx(500.0, abs=1e-9)
    assert height_obs_from_depth(2.0523, 1.7, 1000.0) == pytest.approx(HEIGHT_AT_2_0523M, abs=1e-9)


def test_height_obs_vanishes_far_away():
    far = [height_obs_from_depth(d, 1.7, 1000.0) for d in (1e3, 1e6, 1e9)]
    assert far[0] > far[1] > far[2] and far[2] < 1e-5


@given(st.floats(2.0 + 1e-6, 1000.0), st.floats(0.5, 2.5))
def test_depth_round_trip(h, H):
    assert height_obs_from_depth(depth_from_box(h, H, 1000.0), H, 1000.0) == pytest.approx(h, abs=1e-9)


@given(st.floats(3.0, 999.0), st.floats(0.5, 2.5))
def test_depth_strictly_decreasing(h, H):
    assert depth_from_box(h + 1.0, H, 1000.0) < depth_from_box(h, H, 1000.0)


def test_selectors_have_one_unit_per_row():
    for H, rows in ((H_IMG, (W1, W2, ASPECT, DEPTH)), (H_LIDAR, (BOX_H, DEPTH)),
                    (H_JOINT, (W1, W2, ASPECT, BOX_H, DEPTH))):
        assert H.shape == (len(rows), 10)
        np.testing.assert_array_equal(H.sum(axis=1), 1.0)
        np.testing.assert_array_equal(np.argmax(H, axis=1), rows)


def test_image_measurement_chart_residual():
    trk = make_track((0.2, 0.9, -0.1))
    det = CameraDetection(0.0, exp_map(trk.g_ref, trk.basis, np.array([0.1, 0.0])), 0.5, 500.0)
    pkt = image_measurement(det, trk)
    np.testing.assert_allclose(pkt.z[:2], [0.1, 0.0], atol=1e-12)
    assert pkt.z[2] == 0.5
    assert pkt.z[3] == pytest.approx(DEPTH_AT_500PX, abs=1e-12)


def test_direction_variance_scales_with_pixel_noise():
    trk = make_track()
    det = CameraDetection(0.0, trk.g_ref, 0.5, 500.0)
    r1 = image_measurement(det, trk, MeasurementNoise(sigma_px=2.0)).R
    r2 = image_measurement(det, trk, MeasurementNoise(sigma_px=4.0)).R
    np.testing.assert_allclose(r2[:2, :2], 4.0 * r1[:2, :2], rtol=1e-12)
    f = 2.0 * 1000.0 / math.pi
    assert r1[0, 0] == pytest.approx((2.0 / f) ** 2, rel=1e-12)


def test_lidar_measurement_example():
    pkt = lidar_measurement(LidarDepthObs(0.0, 0.0, DEPTH_AT_500PX, 0.05), make_track())
    np.testing.assert_allclose(pkt.z, [500.0, DEPTH_AT_500PX], atol=1e-9)


def test_lidar_spread_floor_and_determinism():
    trk = make_track()
    a = lidar_measurement(LidarDepthObs(0.0, 0.0, 3.0, 0.0), trk)
    b = lidar_measurement(LidarDepthObs(0.0, 0.0, 3.0, 0.0), trk)
    assert a.R[1, 1] == pytest.approx(0.02 ** 2)
    assert np.array_equal(a.R, b.R)


def test_joint_packet_structure():
    trk = make_track()
    det = CameraDetection(1.0, trk.g_ref, 0.4, 400.0)
    img = image_measurement(det, trk)
    lid = lidar_measurement(LidarDepthObs(1.002, 0.0, 3.1, 0.05), trk)
    j = joint_measurement(img, lid)
    np.testing.assert_array_equal(j.H, H_JOINT)
    assert j.z[3] == 400.0 and j.z[4] == 3.1
    np.testing.assert_allclose(j.R[:3, :3], img.R[:3, :3])
    assert j.R[4, 4] == lid.R[1, 1]
    assert np.count_nonzero(j.R - np.diag(np.diag(j.R))) == 0


def test_joint_requires_sync():
    trk = make_track()
    img = image_measurement(CameraDetection(1.0, trk.g_ref, 0.4, 400.0), trk)
    lid = lidar_measurement(LidarDepthObs(1.010, 0.0, 3.1, 0.05), trk)
    with pytest.raises(SyncError):
        joint_measurement(img, lid, dt_sync=0.005)


def test_detection_validation():
    with pytest.raises(ValueError):
        CameraDetection(0.0, np.array([1.0, 0, 0]), 0.4, 0.0)
    with pytest.raises(ValueError):
        CameraDetection(0.0, np.array([1.0, 0, 0]), 0.4, 10.0, score=1.5)
    with pytest.raises(ValueError):
        LidarDepthObs(0.0, 0.0, -1.0)
