"""Image-plane baseline: the same tracker on an equirectangular pixel canvas.

Tracks live in pixel coordinates ``(u, v)`` of a ``W x 2 img_h`` panorama
(``W = 4 img_h``) with a constant-velocity Kalman filter and pixel-space
IoU + Mahalanobis association.  The motion model and the association cost do
NOT wrap the azimuth column: a target walking across the left/right edge of
the panorama produces a residual of about ``W`` pixels, fails the gate and is
picked up by a new track.  That failure is the behaviour being measured, so
it must not be "fixed" here; ``u`` is wrapped only when reporting bearings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .association import solve_assignment
from .errors import NonMonotonicTimeError
from .filter import update_rows_arrays
from .measurements import CameraDetection
from .state import ASPECT_MIN, TrackStatus
from .tracker import FrameInput, TrackerConfig, TrackOutput

PIXEL_DIM = 8
# pixel state layout: u, v, u_dot, v_dot, aspect, aspect_dot, box_h, box_h_dot
U, V, U_DOT, V_DOT, P_ASPECT, P_ASPECT_DOT, P_BOX_H, P_BOX_H_DOT = range(PIXEL_DIM)
_PIXEL_PAIRS = ((U, U_DOT), (V, V_DOT), (P_ASPECT, P_ASPECT_DOT), (P_BOX_H, P_BOX_H_DOT))
_OBS_ROWS = np.array([U, V, P_ASPECT, P_BOX_H])
_PIXEL_FLOORS = ((P_ASPECT, ASPECT_MIN), (P_BOX_H, 1e-6))


def canvas_size(img_h: float) -> tuple[float, float]:
    """Width and height (px) of the equirectangular canvas."""
    return 4.0 * img_h, 2.0 * img_h


def project_equirect(bearing, img_h: float = 1000.0) -> tuple[np.ndarray, np.ndarray]:
    """Pixel column ``u`` (azimuth) and row ``v`` (elevation) of unit bearings."""
    g = np.asarray(bearing, dtype=float)
    W, _ = canvas_size(img_h)
    u = W * (np.arctan2(g[..., 1], g[..., 0]) + math.pi) / (2.0 * math.pi)
    v = 2.0 * img_h * (0.5 * math.pi - np.arcsin(np.clip(g[..., 2], -1.0, 1.0))) / math.pi
    return u, v


def unproject_equirect(u, v, img_h: float = 1000.0) -> np.ndarray:
    """Unit bearings of pixel positions; ``u`` is taken modulo the canvas width."""
    W, _ = canvas_size(img_h)
    az = 2.0 * math.pi * (np.asarray(u, dtype=float) % W) / W - math.pi
    el = 0.5 * math.pi - math.pi * np.asarray(v, dtype=float) / (2.0 * img_h)
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)


@dataclass
class PixelTrack:
    id: int
    x: np.ndarray
    P: np.ndarray
    status: TrackStatus = TrackStatus.TENTATIVE
    hits: int = 1
    misses: int = 0
    last_update: float = 0.0
    age: int = 1


def pixel_transition(dt: float) -> np.ndarray:
    F = np.eye(PIXEL_DIM)
    for i, j in _PIXEL_PAIRS:
        F[i, j] = dt
    return F


def box_height_accel_std(box_h, cfg: TrackerConfig) -> np.ndarray:
    """Box-height acceleration std (px/s^2) matching the depth process noise.

    The depth acceleration std maps through ``|dh/dd| = 4 f sin^2(h / 2f) / H``
    (``H`` the prior physical height); ``cfg.process.sigma_h`` is the floor.
    Without this the box-height rate of a close, approaching target outruns the
    filter and the gate fails even though nothing crosses the seam.
    """
    f = cfg.noise.f_ang
    s = np.sin(0.5 * np.clip(box_h, 0.0, cfg.noise.img_h) / f)
    return np.maximum(cfg.process.sigma_h, cfg.process.sigma_d * 4.0 * f * s * s / cfg.height_prior)


def pixel_process_noise(dt: float, cfg: TrackerConfig, box_h=None) -> np.ndarray:
    """White-noise acceleration per pair; the bearing sigma is scaled to pixels.

    With ``box_h`` (one entry per track) the box-height pair uses
    :func:`box_height_accel_std` and the result is stacked per track.
    """
    f = cfg.noise.f_ang
    q = cfg.process
    block = np.array([[dt**4 / 4.0, dt**3 / 2.0], [dt**3 / 2.0, dt**2]])
    sig_h = q.sigma_h if box_h is None else box_height_accel_std(np.asarray(box_h, dtype=float), cfg)
    shape = np.shape(sig_h)
    Q = np.zeros(shape + (PIXEL_DIM, PIXEL_DIM))
    for (i, j), s in zip(_PIXEL_PAIRS, (q.sigma_w * f, q.sigma_w * f, q.sigma_aspect, sig_h)):
        Q[..., [i, i, j, j], [i, j, i, j]] = (np.asarray(s) ** 2)[..., None] * block.ravel()
    return Q


def pixel_iou(ua, va, wa, ha, ub, vb, wb, hb) -> np.ndarray:
    """Axis-aligned IoU of boxes given by centre and size (pixels, no wrap)."""
    ix = np.maximum(np.minimum(np.minimum(wa, wb), 0.5 * (wa + wb) - np.abs(ua - ub)), 0.0)
    iy = np.maximum(np.minimum(np.minimum(ha, hb), 0.5 * (ha + hb) - np.abs(va - vb)), 0.0)
    inter = ix * iy
    return inter / (wa * ha + wb * hb - inter)


def spawn_pixel_track(track_id: int, det: CameraDetection, cfg: TrackerConfig) -> PixelTrack:
    noise, init = cfg.noise, cfg.init
    f = noise.f_ang
    u, v = project_equirect(det.bearing, noise.img_h)
    x = np.array([u, v, 0.0, 0.0, det.aspect, 0.0, det.box_h, 0.0])
    var = np.array([
        noise.sigma_px ** 2, noise.sigma_px ** 2,
        (init.sigma_w_dot * f) ** 2, (init.sigma_w_dot * f) ** 2,
        noise.sigma_aspect ** 2, init.sigma_aspect_dot ** 2,
        noise.sigma_px ** 2, init.sigma_h_dot ** 2,
    ])
    return PixelTrack(track_id, x, np.diag(var), last_update=det.t)


class PixelTracker:
    """Equirectangular pixel-space tracker with the spherical tracker's lifecycle."""

    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self.tracks: list[PixelTrack] = []
        self.next_id = 1
        self.t_prev: float | None = None
        self.frame_count = 0

    def _costs(self, x, P, dets: list[CameraDetection]):
        cfg = self.cfg
        noise, a = cfg.noise, cfg.assoc
        g = np.array([d.bearing for d in dets], dtype=float)
        u, v = project_equirect(g, noise.img_h)
        aspect = np.array([d.aspect for d in dets])
        box_h = np.array([d.box_h for d in dets])
        z = np.stack([u, v, aspect, box_h], axis=-1)                  # (m, 4)
        # innovation without azimuth wrapping, on purpose
        y = z[None, :, :] - x[:, None, _OBS_ROWS]
        S = P[:, _OBS_ROWS[:, None], _OBS_ROWS] + np.diag(
            [noise.sigma_px ** 2, noise.sigma_px ** 2, noise.sigma_aspect ** 2, noise.sigma_px ** 2])
        d2 = np.maximum(np.einsum("nmi,nij,nmj->nm", y, np.linalg.inv(S), y), 0.0)
        feasible = d2 <= a.chi2_img
        th = np.maximum(x[:, P_BOX_H], 1e-6)
        iou = pixel_iou(x[:, U, None], x[:, V, None], (np.maximum(x[:, P_ASPECT], 1e-6) * th)[:, None],
                        th[:, None], u, v, aspect * box_h, box_h)
        iou = np.where(feasible, iou, 0.0)
        cost = a.lambda_maha * d2 / a.chi2_img + a.lambda_iou * (1.0 - iou)
        return np.where(feasible, cost, np.inf), feasible, z

    def _stage(self, cost, feasible, rows, cols):
        if not rows or not cols:
            return [], rows, cols
        pairs = solve_assignment(cost[rows][:, cols], feasible[rows][:, cols])
        matches = [(rows[i], cols[j]) for i, j in pairs]
        mr = {i for i, _ in matches}
        mc = {j for _, j in matches}
        return matches, [i for i in rows if i not in mr], [j for j in cols if j not in mc]

    def step(self, frame: FrameInput) -> list[TrackOutput]:
        cfg = self.cfg
        a, noise = cfg.assoc, cfg.noise
        if self.t_prev is not None and frame.t < self.t_prev:
            raise NonMonotonicTimeError(f"frame time {frame.t} precedes previous {self.t_prev}")
        dt = 0.0 if self.t_prev is None else frame.t - self.t_prev
        self.t_prev = frame.t
        self.frame_count += 1

        dets = [d for d in frame.detections
                if noise.h_px_min < d.box_h <= noise.img_h and d.score >= a.tau_low]
        tracks = self.tracks
        matched: dict[int, int] = {}
        births = [j for j, d in enumerate(dets) if d.score >= a.tau_high]
        if tracks:
            F = pixel_transition(dt)
            x = np.stack([t.x for t in tracks]) @ F.T
            P = F @ np.stack([t.P for t in tracks]) @ F.T
            if dt > 0:
                P = P + pixel_process_noise(dt, cfg, x[:, P_BOX_H])
            if dets:
                cost, feasible, z = self._costs(x, P, dets)
                high = [j for j, d in enumerate(dets) if d.score >= a.tau_high]
                low = [j for j, d in enumerate(dets) if d.score < a.tau_high]
                pool = [i for i, t in enumerate(tracks) if t.status is not TrackStatus.TENTATIVE]
                tentative = [i for i, t in enumerate(tracks) if t.status is TrackStatus.TENTATIVE]
                m1, rest, high_left = self._stage(cost, feasible, pool, high)
                m2, _, _ = self._stage(cost, feasible, rest, low)
                m3, _, births = self._stage(cost, feasible, tentative, high_left)
                matched = dict(m1 + m2 + m3)
            if matched:
                idx = np.array(sorted(matched))
                zi = z[[matched[i] for i in idx]]
                r = np.tile([noise.sigma_px ** 2, noise.sigma_px ** 2,
                             noise.sigma_aspect ** 2, noise.sigma_px ** 2], (idx.size, 1))
                mask = np.ones((idx.size, 4), dtype=bool)
                x[idx], P[idx] = _pixel_update(x[idx], P[idx], zi, mask, r)
            for i, trk in enumerate(tracks):
                trk.x, trk.P = x[i], P[i]

        survivors = []
        for i, trk in enumerate(tracks):
            trk.age += 1
            if i in matched:
                trk.hits += 1
                trk.misses = 0
                trk.last_update = frame.t
                if trk.status is TrackStatus.LOST:
                    trk.status = TrackStatus.CONFIRMED
                elif trk.status is TrackStatus.TENTATIVE and trk.hits >= a.confirm_hits:
                    trk.status = TrackStatus.CONFIRMED
            else:
                trk.hits = 0
                trk.misses += 1
                if trk.status is TrackStatus.TENTATIVE:
                    continue
                trk.status = TrackStatus.LOST
                if trk.misses > a.max_age_frames:
                    continue
            survivors.append(trk)
        for j in births:
            survivors.append(spawn_pixel_track(self.next_id, dets[j], cfg))
            self.next_id += 1
        self.tracks = survivors
        return self.outputs(frame.t, frame.sensor_pose)

    def outputs(self, t: float, sensor_pose: np.ndarray | None = None) -> list[TrackOutput]:
        """Confirmed tracks in the spherical tracker's output format.

        Depth comes from the box height and the prior physical height; the
        covariance diagonal is mapped onto the 10-entry spherical layout
        (angles in rad, depth terms propagated from the box-height terms).
        """
        live = [trk for trk in self.tracks if trk.status is TrackStatus.CONFIRMED]
        if not live:
            return []
        cfg = self.cfg
        noise = cfg.noise
        f = noise.f_ang
        x = np.stack([trk.x for trk in live])
        var = np.stack([trk.P.diagonal() for trk in live])
        g = unproject_equirect(x[:, U], x[:, V], noise.img_h)
        box_h = np.clip(x[:, P_BOX_H], noise.h_px_min * (1.0 + 1e-9), noise.img_h)
        half = 0.5 * box_h / f
        depth = 0.5 * cfg.height_prior / np.tan(half)
        dd_dh = cfg.height_prior / (4.0 * f * np.sin(half) ** 2)
        p = g * depth[:, None]
        if sensor_pose is not None:
            p = p @ sensor_pose[:3, :3].T + sensor_pose[:3, 3]
        cov = np.empty((len(live), 10))
        cov[:, :4] = var[:, :4] / (f * f)
        cov[:, 4:8] = var[:, 4:8]
        cov[:, 8] = dd_dh ** 2 * var[:, P_BOX_H]
        cov[:, 9] = dd_dh ** 2 * var[:, P_BOX_H_DOT]
        return [TrackOutput(t, trk.id, g[i], float(depth[i]), p[i], cov[i])
                for i, trk in enumerate(live)]


def _pixel_update(x, P, z, mask, r):
    """Kalman correction of the observed pixel rows (u, v, aspect, box_h)."""
    return update_rows_arrays(x, P, z, _OBS_ROWS, mask, r, floors=_PIXEL_FLOORS)


def baseline_step(tracker: PixelTracker, frame: FrameInput) -> tuple[PixelTracker, list[TrackOutput]]:
    """Functional spelling of :meth:`PixelTracker.step` (mutates and returns ``tracker``)."""
    return tracker, tracker.step(frame)


__all__ = [
    "PixelTrack", "PixelTracker", "baseline_step", "box_height_accel_std", "canvas_size", "pixel_iou",
    "pixel_process_noise", "pixel_transition", "project_equirect", "spawn_pixel_track",
    "unproject_equirect",
]
