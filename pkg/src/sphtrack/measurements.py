"""Camera and LiDAR observations turned into (z, H, R) packets.

The panoramic camera maps angles to pixels linearly: the full image height
``img_h`` spans pi/2 rad, so one radian is ``2 * img_h / pi`` pixels.  Box
height and depth are related through the physical target height ``height_est``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBoxError, DimensionMismatch, SyncError
from .geometry import log_map
from .state import ASPECT, BOX_H, DEPTH, STATE_DIM, W1, W2, TrackHypothesis


class Modality(str, enum.Enum):
    IMAGE = "image"
    LIDAR = "lidar"
    JOINT = "joint"


@dataclass(frozen=True)
class CameraDetection:
    t: float
    bearing: np.ndarray
    aspect: float
    box_h: float
    score: float = 1.0

    def __post_init__(self):
        if not self.box_h > 0:
            raise ValueError(f"box_h must be > 0, got {self.box_h}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class LidarDepthObs:
    t: float
    azimuth: float
    depth: float
    spread: float = 0.0

    def __post_init__(self):
        if not self.depth > 0:
            raise ValueError(f"depth must be > 0, got {self.depth}")
        if self.spread < 0:
            raise ValueError(f"spread must be >= 0, got {self.spread}")


@dataclass(frozen=True)
class MeasurementNoise:
    img_h: float = 1000.0
    sigma_px: float = 2.0
    sigma_aspect: float = 0.05
    sigma_d_min: float = 0.02
    h_px_min: float = 2.0
    dt_sync: float = 0.005
    px_per_rad: float | None = None  # None -> 2 * img_h / pi

    @property
    def f_ang(self) -> float:
        return self.px_per_rad if self.px_per_rad is not None else angular_gain(self.img_h)

    @property
    def sigma_dir(self) -> float:
        """Bearing noise (rad) equivalent to ``sigma_px`` pixels."""
        return self.sigma_px / self.f_ang


@dataclass
class MeasurementPacket:
    z: np.ndarray
    H: np.ndarray
    R: np.ndarray
    modality: Modality
    t: float = 0.0
    # raw detector box height and its variance, carried for the joint form
    box_h_det: float | None = None
    box_h_var: float | None = None
    rows: tuple[int, ...] = field(default=())

    def __post_init__(self):
        m = self.z.shape[0]
        if self.H.shape != (m, STATE_DIM) or self.R.shape != (m, m):
            raise DimensionMismatch(
                f"z has {m} rows but H is {self.H.shape} and R is {self.R.shape}")


def angular_gain(img_h: float) -> float:
    """Pixels per radian of the panoramic camera."""
    return 2.0 * img_h / math.pi


def selector(rows) -> np.ndarray:
    H = np.zeros((len(rows), STATE_DIM))
    H[np.arange(len(rows)), list(rows)] = 1.0
    return H


IMG_ROWS = (W1, W2, ASPECT, DEPTH)
LIDAR_ROWS = (BOX_H, DEPTH)
JOINT_ROWS = (W1, W2, ASPECT, BOX_H, DEPTH)
H_IMG = selector(IMG_ROWS)
H_LIDAR = selector(LIDAR_ROWS)
H_JOINT = selector(JOINT_ROWS)
for _H in (H_IMG, H_LIDAR, H_JOINT):
    _H.flags.writeable = False


def depth_from_box(box_h_det: float, height_est: float, img_h: float,
                   h_px_min: float = 2.0, px_per_rad: float | None = None) -> float:
    """Range (m) at which a target of height ``height_est`` spans ``box_h_det`` px."""
    if box_h_det <= h_px_min:
        raise DegenerateBoxError(f"box height {box_h_det} px <= {h_px_min} px")
    if box_h_det > img_h:
        raise DegenerateBoxError(f"box height {box_h_det} px exceeds image height {img_h}")
    f = px_per_rad if px_per_rad is not None else angular_gain(img_h)
    alpha = box_h_det / f
    return 0.5 * height_est / math.tan(0.5 * alpha)


def height_obs_from_depth(depth_obs: float, height_est: float, img_h: float,
                          px_per_rad: float | None = None) -> float:
    """Expected box height (px) of a ``height_est`` m target at ``depth_obs`` m.

    Exact inverse of :func:`depth_from_box`.
    """
    if not depth_obs > 0 or not height_est > 0:
        raise ValueError("depth and height must be positive")
    f = px_per_rad if px_per_rad is not None else angular_gain(img_h)
    return 2.0 * math.atan(height_est / (2.0 * depth_obs)) * f


def depth_from_box_std(box_h_det: float, height_est: float, noise: MeasurementNoise) -> float:
    """First-order std of :func:`depth_from_box` under ``sigma_px`` pixel noise."""
    half = 0.5 * box_h_det / noise.f_ang
    s = math.sin(half)
    return height_est * noise.sigma_px / (4.0 * noise.f_ang * s * s)


def height_from_observations(box_h_det: float, depth_obs: float, img_h: float,
                             px_per_rad: float | None = None) -> float:
    """Physical height (m) implied by a box height and a range."""
    f = px_per_rad if px_per_rad is not None else angular_gain(img_h)
    return 2.0 * depth_obs * math.tan(0.5 * box_h_det / f)


def height_sample_var(box_h_det, depth_obs, var_depth, noise: MeasurementNoise):
    """First-order variance of :func:`height_from_observations` (array-friendly)."""
    f = noise.f_ang
    half = 0.5 * np.asarray(box_h_det, dtype=float) / f
    ds_dd = 2.0 * np.tan(half)
    ds_dh = depth_obs / (f * np.cos(half) ** 2)
    return ds_dd * ds_dd * var_depth + ds_dh * ds_dh * noise.sigma_px ** 2


def update_height(height_est, height_var, sample, sample_var, min_gain: float = 0.05):
    """Fold height samples into running estimates (scalars or arrays).

    Uses the scalar Kalman gain while the estimate is uncertain, never dropping
    below ``min_gain``, so the long-run behaviour is an exponential moving
    average with rate ``min_gain``.
    """
    total = np.asarray(height_var + sample_var, dtype=float)
    k = np.where(total > 0, height_var / np.where(total > 0, total, 1.0), 1.0)
    k = np.maximum(k, min_gain)
    est = height_est + k * (sample - height_est)
    var = (1.0 - k) ** 2 * height_var + k * k * sample_var
    if np.ndim(est) == 0:
        return float(est), float(var)
    return est, var


def image_measurement(det: CameraDetection, track: TrackHypothesis,
                      noise: MeasurementNoise = MeasurementNoise()) -> MeasurementPacket:
    """``z = [w1, w2, aspect, depth_from_box]`` in the track's chart."""
    w = log_map(track.g_ref, track.basis, det.bearing)
    d_det = depth_from_box(det.box_h, track.height_est, noise.img_h, noise.h_px_min, noise.px_per_rad)
    sd = depth_from_box_std(det.box_h, track.height_est, noise)
    # an uncertain physical height scales the derived depth: dd/dh_est = d / h_est
    var_d = sd * sd + (d_det / track.height_est) ** 2 * track.height_var
    var_dir = noise.sigma_dir ** 2
    z = np.array([w[0], w[1], det.aspect, d_det])
    R = np.diag([var_dir, var_dir, noise.sigma_aspect ** 2, var_d])
    return MeasurementPacket(z, H_IMG, R, Modality.IMAGE, t=det.t,
                             box_h_det=float(det.box_h), box_h_var=noise.sigma_px ** 2,
                             rows=IMG_ROWS)


def lidar_measurement(obs: LidarDepthObs, track: TrackHypothesis,
                      noise: MeasurementNoise = MeasurementNoise()) -> MeasurementPacket:
    """``z = [expected box height, depth]`` from one aggregated LiDAR depth."""
    d = obs.depth
    h_obs = height_obs_from_depth(d, track.height_est, noise.img_h, noise.px_per_rad)
    var_d = max(obs.spread ** 2, noise.sigma_d_min ** 2)
    h = track.height_est
    denom = d * d + 0.25 * h * h
    dh_dd = noise.f_ang * h / denom     # sensitivity to the depth
    dh_dh = noise.f_ang * d / denom     # sensitivity to the physical height
    var_h = dh_dd * dh_dd * var_d + dh_dh * dh_dh * track.height_var + noise.sigma_px ** 2
    z = np.array([h_obs, d])
    R = np.diag([var_h, var_d])
    return MeasurementPacket(z, H_LIDAR, R, Modality.LIDAR, t=obs.t, rows=LIDAR_ROWS)


def stack_packets(*packets: MeasurementPacket, modality: Modality = Modality.JOINT) -> MeasurementPacket:
    """Stack packets into one with block-diagonal R."""
    z = np.concatenate([p.z for p in packets])
    H = np.vstack([p.H for p in packets])
    R = np.zeros((z.shape[0], z.shape[0]))
    k = 0
    for p in packets:
        m = p.z.shape[0]
        R[k:k + m, k:k + m] = p.R
        k += m
    rows = tuple(r for p in packets for r in p.rows)
    return MeasurementPacket(z, H, R, modality, t=max(p.t for p in packets), rows=rows)


def joint_parts(img_pkt: MeasurementPacket, lidar_pkt: MeasurementPacket,
                dt_sync: float = 0.005) -> tuple[MeasurementPacket, MeasurementPacket]:
    """Image-side and LiDAR-side halves of the joint 5-row observation.

    The image half observes ``(w1, w2, aspect, box_h)`` with the raw detector
    box height; the LiDAR half observes ``depth``.  Stacking the two gives
    :func:`joint_measurement`.
    """
    if img_pkt.modality is not Modality.IMAGE or lidar_pkt.modality is not Modality.LIDAR:
        raise ValueError("joint_parts needs one image and one lidar packet")
    if abs(img_pkt.t - lidar_pkt.t) > dt_sync:
        raise SyncError(f"packets {abs(img_pkt.t - lidar_pkt.t) * 1e3:.3f} ms apart "
                        f"(limit {dt_sync * 1e3:.3f} ms)")
    if img_pkt.box_h_det is None:
        raise ValueError("image packet carries no raw box height")
    img_rows = (W1, W2, ASPECT, BOX_H)
    R_img = np.zeros((4, 4))
    R_img[:3, :3] = img_pkt.R[:3, :3]
    R_img[3, 3] = img_pkt.box_h_var
    img_part = MeasurementPacket(
        np.array([img_pkt.z[0], img_pkt.z[1], img_pkt.z[2], img_pkt.box_h_det]),
        selector(img_rows), R_img, Modality.IMAGE, t=img_pkt.t, rows=img_rows)
    lidar_part = MeasurementPacket(
        lidar_pkt.z[1:2].copy(), selector((DEPTH,)), lidar_pkt.R[1:2, 1:2].copy(),
        Modality.LIDAR, t=lidar_pkt.t, rows=(DEPTH,))
    return img_part, lidar_part


def joint_measurement(img_pkt: MeasurementPacket, lidar_pkt: MeasurementPacket,
                      dt_sync: float = 0.005) -> MeasurementPacket:
    """``z = [w1, w2, aspect, box_h_det, depth_obs]`` for synchronized packets."""
    return stack_packets(*joint_parts(img_pkt, lidar_pkt, dt_sync))
