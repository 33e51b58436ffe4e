"""Multi-object tracker running the spherical filter frame by frame.

Each :meth:`SphericalTracker.step` predicts all tracks, associates high-score
detections to confirmed/lost tracks, then low-score detections to the tracks
still unmatched, then remaining high-score detections to tentative tracks.
Matched tracks receive an image update and, when a LiDAR return falls inside
their azimuth gate, a LiDAR update (a single joint update when the two are
synchronized).  All tracks are re-anchored on the sphere
before the lifecycle bookkeeping.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .association import (AssociationConfig, CostResult, cost_arrays, cost_arrays_compiled,
                          solve_assignment)
from .errors import ChartDomainError, NonMonotonicTimeError, SingularInnovation
from .filter import LAMBDA_FLOOR, finalize_arrays, predict_arrays, update_rows_arrays
from .geometry import EPS_SMALL, azimuth, exp_map, make_tangent_basis, normalize, wrap_angle
from .measurements import (CameraDetection, LidarDepthObs,
                           MeasurementNoise, depth_from_box, depth_from_box_std,
                           height_sample_var, update_height)
from .state import (ASPECT, BOX_H, DEPTH, STATE_DIM, W1, W2, ProcessNoise, TrackHypothesis,
                    TrackStatus)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InitNoise:
    """Initial standard deviations for quantities a single detection cannot pin down."""

    sigma_w_dot: float = 0.3        # rad/s
    sigma_aspect_dot: float = 0.1   # 1/s
    sigma_h_dot: float = 50.0       # px/s
    sigma_d_rel: float = 0.15       # fraction of the initial depth
    sigma_d_dot: float = 1.0        # m/s


@dataclass(frozen=True)
class TrackerConfig:
    assoc: AssociationConfig = field(default_factory=AssociationConfig)
    noise: MeasurementNoise = field(default_factory=MeasurementNoise)
    process: ProcessNoise = field(default_factory=ProcessNoise)
    init: InitNoise = field(default_factory=InitNoise)
    height_prior: float = 1.7
    height_prior_std: float = 0.1
    height_ema: float = 0.05
    use_joint: bool = True
    compiled: bool = True  # numba kernels when available, numpy otherwise


@dataclass
class FrameInput:
    t: float
    detections: list[CameraDetection] = field(default_factory=list)
    lidar_obs: list[LidarDepthObs] = field(default_factory=list)
    sensor_pose: np.ndarray | None = None  # 4x4 sensor-to-world transform


@dataclass
class TrackOutput:
    t: float
    id: int
    bearing: np.ndarray
    depth: float
    position: np.ndarray
    cov_diag: np.ndarray

    @property
    def planar_xy(self) -> np.ndarray:
        return self.position[:2]


def spawn_track(track_id: int, det: CameraDetection, cfg: TrackerConfig) -> TrackHypothesis:
    noise, init = cfg.noise, cfg.init
    g = normalize(det.bearing)
    d = depth_from_box(det.box_h, cfg.height_prior, noise.img_h, noise.h_px_min, noise.px_per_rad)
    sd = depth_from_box_std(det.box_h, cfg.height_prior, noise)
    x = np.zeros(STATE_DIM)
    x[ASPECT] = det.aspect
    x[BOX_H] = det.box_h
    x[DEPTH] = d
    var = np.array([
        noise.sigma_dir ** 2, noise.sigma_dir ** 2,
        init.sigma_w_dot ** 2, init.sigma_w_dot ** 2,
        noise.sigma_aspect ** 2, init.sigma_aspect_dot ** 2,
        noise.sigma_px ** 2, init.sigma_h_dot ** 2,
        sd * sd + (init.sigma_d_rel * d) ** 2, init.sigma_d_dot ** 2,
    ])
    return TrackHypothesis(id=track_id, x=x, P=np.diag(var), g_ref=g,
                           basis=make_tangent_basis(g), height_est=cfg.height_prior,
                           height_var=cfg.height_prior_std ** 2,
                           status=TrackStatus.TENTATIVE, hits=1, misses=0, last_update=det.t)


def azimuth_std_arrays(g_ref: np.ndarray, basis: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Std of the azimuth angle implied by the chart covariance, per track."""
    rho = np.hypot(g_ref[..., 0], g_ref[..., 1])
    safe = np.where(rho > 1e-9, rho, 1.0)
    east = np.stack([-g_ref[..., 1] / safe, g_ref[..., 0] / safe, np.zeros_like(rho)], axis=-1)
    a = (east[..., None, :] @ basis)[..., 0, :]
    var = np.einsum("...i,...ij,...j->...", a, P[..., :2, :2], a)
    return np.where(rho > 1e-9, np.sqrt(np.maximum(var, 0.0)) / safe, math.pi)


def azimuth_std(track: TrackHypothesis) -> float:
    return float(azimuth_std_arrays(track.g_ref, track.basis, track.P))


def greedy_pairs(dist: np.ndarray, allowed: np.ndarray) -> dict[int, int]:
    """Row -> column pairs taken in order of increasing ``dist`` (ties by row, column)."""
    rows, cols = np.nonzero(allowed)
    order = np.lexsort((cols, rows, dist[rows, cols]))
    used_r, used_c, out = set(), set(), {}
    for k in order:
        i, j = int(rows[k]), int(cols[k])
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        out[i] = j
    return out


# row template of the per-frame update: image rows, then LiDAR (or joint) rows
_UPDATE_ROWS = np.array([W1, W2, ASPECT, DEPTH, BOX_H, DEPTH])


class SphericalTracker:
    """Stateful tracker; one instance per sensor stream, not thread-safe.

    Per-frame filter work runs on the stacked state of all tracks; the
    :class:`TrackHypothesis` objects are rewritten at the end of each step.
    """

    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self.tracks: list[TrackHypothesis] = []
        self.next_id = 1
        self.t_prev: float | None = None
        self.frame_count = 0
        self._bank = None
        self._compiled = self.cfg.compiled and kernels.HAVE_NUMBA
        self._sigmas = np.array(self.cfg.process.per_pair())

    def _stage(self, res: CostResult, rows: list[int], cols: list[int]):
        """Assign ``cols`` (detections) to ``rows`` (tracks) on a slice of the cost matrix."""
        if not rows or not cols:
            return [], rows, cols
        pairs = solve_assignment(res.cost[rows][:, cols], res.feasible[rows][:, cols])
        matches = [(rows[i], cols[j]) for i, j in pairs]
        mr = {i for i, _ in matches}
        mc = {j for _, j in matches}
        return matches, [i for i in rows if i not in mr], [j for j in cols if j not in mc]

    def _assign_lidar(self, x, P, g_ref, basis, lidar: list[LidarDepthObs], t: float) -> dict[int, int]:
        """Greedy nearest-azimuth pairing of LiDAR returns to the given tracks."""
        if x.shape[0] == 0 or not lidar:
            return {}
        a = self.cfg.assoc
        gate = a.lidar_gate_sigmas * np.hypot(azimuth_std_arrays(g_ref, basis, P), a.sigma_lidar_az)
        obs_t = np.array([o.t for o in lidar])
        obs_az = np.array([o.azimuth for o in lidar])
        # bearing of each track propagated to each return time
        w = x[:, None, :2] + x[:, None, 2:4] * (obs_t - t)[None, :, None]      # (k, L, 2)
        in_chart = np.sum(w * w, axis=-1) < 9.0
        w = np.where(in_chart[..., None], w, 0.0)
        g = exp_map(g_ref[:, None, :], basis[:, None], w)
        diff = np.abs(wrap_angle(obs_az[None, :] - azimuth(g)))
        return greedy_pairs(diff, in_chart & (diff <= gate[:, None]))

    def step(self, frame: FrameInput) -> list[TrackOutput]:
        cfg = self.cfg
        a = cfg.assoc
        noise = cfg.noise
        if self.t_prev is not None and frame.t < self.t_prev:
            raise NonMonotonicTimeError(f"frame time {frame.t} precedes previous {self.t_prev}")
        dt = 0.0 if self.t_prev is None else frame.t - self.t_prev
        self.t_prev = frame.t
        self.frame_count += 1

        dets = [d for d in frame.detections
                if noise.h_px_min < d.box_h <= noise.img_h and d.score >= a.tau_low]
        tracks = self.tracks
        n = len(tracks)
        matched: dict[int, int] = {}
        births = [j for j, d in enumerate(dets) if d.score >= a.tau_high]

        if n:
            x, P, g_ref, basis, reused = self._gather()
            h_est = np.array([t.height_est for t in tracks])
            h_var = np.array([t.height_var for t in tracks])
            if self._compiled:
                kernels.predict_kernel(x, P, dt, self._sigmas)
            else:
                x, P = predict_arrays(x, P, dt, cfg.process)

            res = None
            if dets:
                cost_fn = cost_arrays_compiled if self._compiled else cost_arrays
                res = cost_fn(
                    x, P, g_ref, basis, h_est, h_var,
                    np.array([d.bearing for d in dets], dtype=float),
                    np.array([d.aspect for d in dets]), np.array([d.box_h for d in dets]),
                    a, noise)
                high = [j for j, d in enumerate(dets) if d.score >= a.tau_high]
                low = [j for j, d in enumerate(dets) if d.score < a.tau_high]
                pool = [i for i, t in enumerate(tracks) if t.status is not TrackStatus.TENTATIVE]
                tentative = [i for i, t in enumerate(tracks) if t.status is TrackStatus.TENTATIVE]
                # stage 1: high-score detections vs confirmed + lost
                m1, rest, high_left = self._stage(res, pool, high)
                # stage 2: low-score detections vs still-unmatched confirmed + lost
                m2, _, _ = self._stage(res, rest, low)
                # stage 3: remaining high-score detections vs tentative tracks
                m3, _, births = self._stage(res, tentative, high_left)
                matched = dict(m1 + m2 + m3)

            if matched:
                x, P = self._correct(x, P, g_ref, basis, h_est, h_var, res, matched, dets, frame)
            if self._compiled:
                bad = kernels.finalize_kernel(x, P, g_ref, basis, EPS_SMALL)
                if bad >= 0:
                    raise ChartDomainError("chart offset outside the injectivity radius")
            else:
                x, P, g_ref, basis = finalize_arrays(x, P, g_ref, basis)
                reused = False
            # hypotheses hold row views of the stacked arrays
            if not reused:
                for i, trk in enumerate(tracks):
                    trk.x, trk.P, trk.g_ref, trk.basis = x[i], P[i], g_ref[i], basis[i]
                self._bank = ((x, P, g_ref, basis),
                              [(t, t.x, t.P, t.g_ref, t.basis) for t in tracks])
            for trk, he, hv in zip(tracks, h_est.tolist(), h_var.tolist()):
                trk.height_est, trk.height_var = he, hv

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
            survivors.append(spawn_track(self.next_id, dets[j], cfg))
            self.next_id += 1
        self.tracks = survivors
        if n and len(survivors) == n:
            return self._emit(frame.t, frame.sensor_pose, x, P, g_ref)
        return self.outputs(frame.t, frame.sensor_pose)

    def _gather(self):
        """Stacked ``x, P, g_ref, basis`` of the current tracks and a reuse flag.

        Reuses last step's arrays when the track list is unchanged and every
        hypothesis still holds the row views it was given.
        """
        tracks = self.tracks
        if self._bank is not None:
            arrays, owners = self._bank
            if len(owners) == len(tracks) and all(
                    t is o and t.x is ox and t.P is oP and t.g_ref is og and t.basis is oB
                    for t, (o, ox, oP, og, oB) in zip(tracks, owners)):
                return arrays + (True,)
        return (np.stack([t.x for t in tracks]), np.stack([t.P for t in tracks]),
                np.stack([t.g_ref for t in tracks]), np.stack([t.basis for t in tracks]), False)

    def _lidar_packets(self, x, P, h_est, h_var, obs: list[LidarDepthObs]):
        """``z = [h_obs, d_obs]``, diagonal variances and gate distance for paired tracks."""
        noise = self.cfg.noise
        f = noise.f_ang
        d = np.array([o.depth for o in obs])
        spread = np.array([o.spread for o in obs])
        var_d = np.maximum(spread * spread, noise.sigma_d_min ** 2)
        denom = d * d + 0.25 * h_est * h_est
        dh_dd = f * h_est / denom
        dh_dh = f * d / denom
        z = np.empty((d.size, 2))
        z[:, 0] = 2.0 * f * np.arctan(h_est / (2.0 * d))
        z[:, 1] = d
        r = np.empty((d.size, 2))
        r[:, 0] = dh_dd * dh_dd * var_d + dh_dh * dh_dh * h_var + noise.sigma_px ** 2
        r[:, 1] = var_d
        y = z - x[:, (BOX_H, DEPTH)]
        s00 = P[:, BOX_H, BOX_H] + r[:, 0]
        # the tracked depth is only known up to the scale of the height estimate,
        # an error shared by all past image updates that P does not carry
        s11 = P[:, DEPTH, DEPTH] + r[:, 1] + (x[:, DEPTH] / h_est) ** 2 * h_var
        s01 = P[:, BOX_H, DEPTH]
        d2 = (s11 * y[:, 0] ** 2 - 2.0 * s01 * y[:, 0] * y[:, 1] + s00 * y[:, 1] ** 2) / (s00 * s11 - s01 * s01)
        return z, r, d2

    def _correct(self, x, P, g_ref, basis, h_est, h_var, res: CostResult,
                 matched: dict[int, int], dets: list[CameraDetection], frame: FrameInput):
        """Image, joint and LiDAR corrections for all matched tracks in one batched update.

        Every track gets the rows of :data:`_UPDATE_ROWS` it actually observes;
        the others are masked out (zero ``H`` row, unit variance, zero residual),
        which leaves the update unchanged.  With a block-diagonal ``R`` the
        stacked image + LiDAR update equals the two sequential updates.
        ``h_est`` and ``h_var`` are updated in place.
        """
        cfg = self.cfg
        noise = cfg.noise
        order = sorted(matched)
        idx = np.asarray(order)
        det_of = np.asarray([matched[i] for i in order])
        n = idx.size

        mask = np.zeros((n, 6), dtype=bool)
        mask[:, :4] = True
        z = np.zeros((n, 6))
        r = np.ones((n, 6))
        z[:, :4], r[:, :4] = res.image_rows(idx, det_of)

        pairs = self._assign_lidar(x[idx], P[idx], g_ref[idx], basis[idx], frame.lidar_obs, frame.t)
        k = np.zeros(0, dtype=int)
        if pairs:
            k = np.fromiter(pairs.keys(), dtype=int, count=len(pairs))
            obs = [frame.lidar_obs[o] for o in pairs.values()]
            ti = idx[k]
            z_l, r_l, d2 = self._lidar_packets(x[ti], P[ti], h_est[ti], h_var[ti], obs)
            # LiDAR packets are checked against the predicted state
            ok = d2 <= cfg.assoc.chi2_lidar
            k, z_l, r_l = k[ok], z_l[ok], r_l[ok]
            obs = [o for o, keep in zip(obs, ok) if keep]
        if k.size:
            box_h = np.array([dets[det_of[j]].box_h for j in k])
            joint = np.array([cfg.use_joint and abs(o.t - dets[det_of[j]].t) <= noise.dt_sync
                              for o, j in zip(obs, k)], dtype=bool)
            # joint form: raw detector box height replaces both derived quantities
            mask[k, 3] = ~joint
            mask[k, 4:] = True
            z[k, 4] = np.where(joint, box_h, z_l[:, 0])
            r[k, 4] = np.where(joint, noise.sigma_px ** 2, r_l[:, 0])
            z[k, 5] = z_l[:, 1]
            r[k, 5] = r_l[:, 1]

        if self._compiled:
            if kernels.update_kernel(x, P, idx, z, _UPDATE_ROWS, mask, r, LAMBDA_FLOOR):
                raise SingularInnovation("innovation covariance is not finite")
        else:
            x[idx], P[idx] = update_rows_arrays(x[idx], P[idx], z, _UPDATE_ROWS, mask, r)

        if k.size:
            # physical height from the raw box height and the LiDAR range
            ti = idx[k]
            depth = z_l[:, 1]
            sample = 2.0 * depth * np.tan(0.5 * box_h / noise.f_ang)
            sample_var = height_sample_var(box_h, depth, r_l[:, 1], noise)
            h_est[ti], h_var[ti] = update_height(h_est[ti], h_var[ti], sample, sample_var, cfg.height_ema)
        return x, P

    def _emit(self, t, sensor_pose, x, P, g) -> list[TrackOutput]:
        # track list unchanged this step: rows of the finalized arrays line up
        live = [i for i, trk in enumerate(self.tracks) if trk.status is TrackStatus.CONFIRMED]
        if not live:
            return []
        p = g * x[:, DEPTH, None]
        if sensor_pose is not None:
            p = p @ sensor_pose[:3, :3].T + sensor_pose[:3, 3]
        cov = P.diagonal(axis1=1, axis2=2)
        tracks = self.tracks
        return [TrackOutput(t, tracks[i].id, g[i], float(x[i, DEPTH]), p[i], cov[i].copy())
                for i in live]

    def outputs(self, t: float, sensor_pose: np.ndarray | None = None) -> list[TrackOutput]:
        live = [trk for trk in self.tracks if trk.status is TrackStatus.CONFIRMED]
        if not live:
            return []
        # bearings are re-anchored every step, so the chart offset is zero
        g = np.stack([trk.g_ref if not trk.x[:2].any() else trk.bearing() for trk in live])
        depth = np.array([trk.x[DEPTH] for trk in live])
        p = g * depth[:, None]
        if sensor_pose is not None:
            p = p @ sensor_pose[:3, :3].T + sensor_pose[:3, 3]
        cov = np.stack([trk.P for trk in live]).diagonal(axis1=1, axis2=2)
        return [TrackOutput(t, trk.id, g[i], float(depth[i]), p[i], cov[i])
                for i, trk in enumerate(live)]


def tracker_step(tracker: SphericalTracker, frame: FrameInput) -> tuple[SphericalTracker, list[TrackOutput]]:
    """Functional spelling of :meth:`SphericalTracker.step` (mutates and returns ``tracker``)."""
    return tracker, tracker.step(frame)
