"""Gating, association costs and one-to-one assignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBoxError
from .filter import LAMBDA_FLOOR, innovation
from . import kernels
from .assignment import solve_lexmin
from .geometry import EPS_ANTIPODAL, cross, exp_map, make_tangent_basis
from .measurements import CameraDetection, MeasurementNoise, MeasurementPacket
from .state import ASPECT, BOX_H, DEPTH, TrackHypothesis

_EZ = np.array([0.0, 0.0, 1.0])
_IMG_IDX = np.array([0, 1, ASPECT, DEPTH])


@dataclass(frozen=True)
class AssociationConfig:
    chi2_img: float = 9.488    # 95% at 4 dof
    chi2_lidar: float = 5.991  # 95% at 2 dof
    tau_high: float = 0.6
    tau_low: float = 0.1
    lambda_maha: float = 1.0
    lambda_iou: float = 1.0
    lambda_depth: float = 0.5
    sigma_d_gate: float = 0.5  # m, depth-consistency scale
    confirm_hits: int = 3
    max_age_frames: int = 30
    lidar_gate_sigmas: float = 3.0
    sigma_lidar_az: float = 0.01  # rad, azimuth resolution of an aggregated LiDAR return

    def __post_init__(self):
        if self.chi2_img <= 0 or self.chi2_lidar <= 0:
            raise ValueError("chi2 thresholds must be > 0")
        if self.tau_high < self.tau_low:
            raise ValueError("tau_high must be >= tau_low")
        if min(self.lambda_maha, self.lambda_iou, self.lambda_depth) < 0:
            raise ValueError("cost weights must be >= 0")
        if self.confirm_hits < 1 or self.max_age_frames < 0:
            raise ValueError("confirm_hits must be >= 1 and max_age_frames >= 0")


@dataclass(frozen=True)
class AngularBox:
    """Box on the sphere: centre bearing plus angular width and height (rad)."""

    center: np.ndarray
    width: float
    height: float

    @classmethod
    def from_pixels(cls, center, aspect: float, box_h: float, f_ang: float) -> "AngularBox":
        return cls(np.asarray(center, dtype=float), aspect * box_h / f_ang, box_h / f_ang)


def mahalanobis_sq(pkt: MeasurementPacket, track: TrackHypothesis,
                   lambda_floor: float = LAMBDA_FLOOR) -> float:
    """Squared Mahalanobis distance of the packet's innovation."""
    y, _, S_inv = innovation(track, pkt, lambda_floor)
    return float(max(y @ S_inv @ y, 0.0))


def local_frame(m: np.ndarray) -> np.ndarray:
    """Tangent frame at ``m`` with columns (east, north); canonical basis at the poles."""
    east = cross(np.broadcast_to(_EZ, m.shape), m)
    n = np.sqrt(np.sum(east * east, axis=-1, keepdims=True))
    ok = n > 1e-9
    east = east / np.where(ok, n, 1.0)
    north = cross(m, east)
    frame = np.stack([east, north], axis=-1)
    if not np.all(ok):
        frame = np.where(ok[..., None], frame, make_tangent_basis(m))
    return frame


def spherical_iou_arrays(ca, wa, ha, cb, wb, hb) -> np.ndarray:
    """Broadcasting core of :func:`spherical_iou` over box centres (..., 3).

    Both centres sit at the same geodesic distance from their midpoint ``m``,
    on opposite sides, so only their separation in the (east, north) frame at
    ``m`` matters: its direction is that of ``ca - cb`` and its length the
    angle between the centres.
    """
    ca = np.asarray(ca, dtype=float)
    cb = np.asarray(cb, dtype=float)
    s = ca + cb                      # along m, |s| = 2 cos(angle / 2)
    d = ca - cb                      # tangent at m, |d| = 2 sin(angle / 2)
    ns = np.sqrt(np.vecdot(s, s))
    chord = np.sqrt(np.vecdot(d, d))
    far = ns <= 2e-3  # near-antipodal centres cannot overlap
    ns = np.maximum(ns, 2e-3)
    rho = np.hypot(s[..., 0], s[..., 1])
    if (rho <= 1e-9 * ns).any():
        m = np.where(far[..., None], _EZ, s / ns[..., None])
        frame = local_frame(m)
        scale = 2.0 * np.arctan2(chord, ns) / np.maximum(chord, 1e-300)
        dx = np.vecdot(d, frame[..., 0]) * scale
        dy = np.vecdot(d, frame[..., 1]) * scale
    else:
        s0, s1, s2 = s[..., 0], s[..., 1], s[..., 2]
        d0, d1, d2 = d[..., 0], d[..., 1], d[..., 2]
        # east = (-s1, s0, 0) / rho, north = m x east; lengths rescaled from chord to arc
        k = 2.0 * np.arctan2(chord, ns) / np.maximum(chord * rho, 1e-300)
        dx = (d1 * s0 - d0 * s1) * k
        dy = (d2 * rho * rho - s2 * (d0 * s0 + d1 * s1)) * (k / ns)
    # overlap of two intervals of lengths a, b whose centres are |t| apart
    ix = np.maximum(np.minimum(np.minimum(wa, wb), 0.5 * (wa + wb) - np.abs(dx)), 0.0)
    iy = np.maximum(np.minimum(np.minimum(ha, hb), 0.5 * (ha + hb) - np.abs(dy)), 0.0)
    inter = ix * iy
    iou = inter / (wa * ha + wb * hb - inter)
    if far.any():
        iou = np.where(far, 0.0, iou)
    return iou


def spherical_iou(a: AngularBox, b: AngularBox) -> float:
    """IoU of two angular boxes laid out on the tangent plane at their midpoint.

    Widths run along the local east direction and heights along north, so the
    boxes stay axis-aligned with the panorama away from the poles.
    """
    if a.width <= 0 or a.height <= 0 or b.width <= 0 or b.height <= 0:
        raise ValueError("angular boxes need positive width and height")
    return float(spherical_iou_arrays(a.center, a.width, a.height, b.center, b.width, b.height))


def solve_assignment(cost: np.ndarray, feasible: np.ndarray | None = None) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one matching over feasible entries.

    The matching first maximises the number of feasible pairs, then minimises
    their total cost; among equal-cost matchings the sorted pair list that is
    lexicographically smallest in (track index, detection index) wins.  Pairs
    are returned sorted by row index.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    if feasible is None:
        feasible = np.isfinite(cost)
    else:
        feasible = np.asarray(feasible, dtype=bool) & np.isfinite(cost)
    return solve_lexmin(cost, feasible)


def matching_cost(cost: np.ndarray, matches) -> float:
    return math.fsum(float(cost[i, j]) for i, j in matches)


@dataclass
class CostResult:
    """Association terms for every (track, detection) pair.

    ``w``, ``depth`` and ``depth_var`` hold the chart coordinates, box-derived
    depth and its variance each detection produces for each track, so matched
    pairs can be updated without recomputation (see :meth:`image_rows`).
    """

    cost: np.ndarray
    feasible: np.ndarray
    d2: np.ndarray
    iou: np.ndarray
    w: np.ndarray | None = None
    aspect: np.ndarray | None = None
    depth: np.ndarray | None = None
    depth_var: np.ndarray | None = None
    var_dir: float = 0.0
    var_aspect: float = 0.0

    def image_rows(self, rows, cols) -> tuple[np.ndarray, np.ndarray]:
        """``z = [w1, w2, aspect, depth]`` and its diagonal variances for the given pairs."""
        rows, cols = np.asarray(rows), np.asarray(cols)
        z = np.empty(rows.shape + (4,))
        z[..., :2] = self.w[rows, cols]
        z[..., 2] = self.aspect[cols]
        z[..., 3] = self.depth[rows, cols]
        r = np.empty(rows.shape + (4,))
        r[..., :2] = self.var_dir
        r[..., 2] = self.var_aspect
        r[..., 3] = self.depth_var[rows, cols]
        return z, r


def cost_arrays(x, P, g_ref, basis, h_est, h_var, g_det, aspect_det, box_h_det,
                cfg: AssociationConfig = AssociationConfig(),
                noise: MeasurementNoise = MeasurementNoise()) -> CostResult:
    """Array core of :func:`build_cost_matrix`; tracks stacked on axis 0.

    Infeasible entries get an infinite cost and zero IoU.
    """
    n = x.shape[0]
    f = noise.f_ang
    var_dir = noise.sigma_dir ** 2
    var_aspect = noise.sigma_aspect ** 2

    valid_box = (box_h_det > noise.h_px_min) & (box_h_det <= noise.img_h)
    half = (0.5 / f) * np.where(valid_box, box_h_det, noise.img_h)
    inv_tan = 1.0 / np.tan(half)
    sin_half = np.sin(half)
    sd_unit = noise.sigma_px / (4.0 * f * sin_half * sin_half)
    d_det = np.multiply.outer(0.5 * h_est, inv_tan)                         # (n, m)
    var_d = np.multiply.outer(h_est * h_est, sd_unit * sd_unit)
    var_d += np.multiply.outer(0.25 * h_var, inv_tan * inv_tan)

    # log map of every detection in every track chart
    c = g_ref @ g_det.T                                                       # (n, m)
    u = g_det @ basis                                                         # (n, m, 2)
    s = np.hypot(u[..., 0], u[..., 1])
    # u vanishes wherever s does, so the floor only avoids 0/0
    w = u * (np.arctan2(s, c) / np.maximum(s, 1e-300))[..., None]

    y = np.empty((n, g_det.shape[0], 4))
    y[..., :2] = w - x[:, None, :2]
    y[..., 2] = aspect_det - x[:, ASPECT, None]
    y[..., 3] = d_det - x[:, DEPTH, None]

    # per track, S_ij = A_i + delta_ij e_d e_d^T with delta_ij >= 0: one inverse
    # per track plus a rank-one correction per detection
    var_base = var_d.min(axis=1)
    A = P[:, _IMG_IDX[:, None], _IMG_IDX]
    diag = A.reshape(n, 16)[:, ::5]
    diag += (var_dir, var_dir, var_aspect, 0.0)
    diag[:, 3] += var_base
    A_inv = np.linalg.inv(A)
    q = y @ A_inv                                                             # (n, m, 4); A symmetric
    delta = var_d - var_base[:, None]
    v = q[..., 3]
    d2 = np.vecdot(q, y) - delta * v * v / (1.0 + delta * A_inv[:, None, 3, 3])
    np.maximum(d2, 0.0, out=d2)

    feasible = (d2 <= cfg.chi2_img) & (c > -1.0 + EPS_ANTIPODAL) & valid_box
    # predicted boxes: centre at the chart offset, sizes from the box-height state
    w_pred = x[:, :2]
    g_pred = exp_map(g_ref, basis, w_pred)
    box_h = np.maximum(x[:, BOX_H], 1e-6) / f
    iou = spherical_iou_arrays(
        g_pred[:, None, :], (np.maximum(x[:, ASPECT], 1e-6) * box_h)[:, None], box_h[:, None],
        g_det[None, :, :], aspect_det * box_h_det / f, box_h_det / f)
    iou[~feasible] = 0.0
    cost = (cfg.lambda_maha / cfg.chi2_img) * d2
    cost += cfg.lambda_iou * (1.0 - iou)
    cost += (cfg.lambda_depth / cfg.sigma_d_gate) * np.abs(y[..., 3])
    cost[~feasible] = np.inf
    return CostResult(cost, feasible, d2, iou, w, aspect_det, d_det, var_d, var_dir, var_aspect)


def cost_arrays_compiled(x, P, g_ref, basis, h_est, h_var, g_det, aspect_det, box_h_det,
                         cfg: AssociationConfig = AssociationConfig(),
                         noise: MeasurementNoise = MeasurementNoise()) -> CostResult:
    """:func:`cost_arrays` evaluated by the compiled pair loop."""
    var_dir, var_aspect = noise.sigma_dir ** 2, noise.sigma_aspect ** 2
    cost, feasible, d2, iou, w, d_det, var_d = kernels.cost_kernel(
        x, P, g_ref, basis, h_est, h_var, g_det, aspect_det, box_h_det,
        noise.f_ang, noise.img_h, noise.h_px_min, noise.sigma_px, var_dir, var_aspect,
        EPS_ANTIPODAL, cfg.chi2_img, cfg.lambda_maha, cfg.lambda_iou, cfg.lambda_depth,
        cfg.sigma_d_gate)
    return CostResult(cost, feasible, d2, iou, w, aspect_det, d_det, var_d, var_dir, var_aspect)


def build_cost_matrix(tracks: list[TrackHypothesis], detections: list[CameraDetection],
                      cfg: AssociationConfig = AssociationConfig(),
                      noise: MeasurementNoise = MeasurementNoise()) -> CostResult:
    """Composite association cost with a chi-square gate on the image innovation.

    ``cost = l_maha * D2 / chi2_img + l_iou * (1 - sIoU) + l_depth * |d - d_det| / sigma_d_gate``;
    entries whose D2 exceeds ``chi2_img`` (or whose box cannot be converted to a
    depth, or whose bearing is antipodal to the track chart) are infeasible and
    carry an infinite cost.
    """
    n, m = len(tracks), len(detections)
    if n == 0 or m == 0:
        z = np.zeros((n, m))
        return CostResult(np.full((n, m), np.inf), np.zeros((n, m), dtype=bool), z, z.copy(),
                          np.zeros((n, m, 2)), np.zeros(m), z.copy(), z.copy())
    return cost_arrays(
        np.stack([t.x for t in tracks]), np.stack([t.P for t in tracks]),
        np.stack([t.g_ref for t in tracks]), np.stack([t.basis for t in tracks]),
        np.array([t.height_est for t in tracks]), np.array([t.height_var for t in tracks]),
        np.stack([np.asarray(d.bearing, dtype=float) for d in detections]),
        np.array([d.aspect for d in detections]), np.array([d.box_h for d in detections]),
        cfg, noise)


def check_box(det: CameraDetection, noise: MeasurementNoise) -> None:
    if det.box_h <= noise.h_px_min or det.box_h > noise.img_h:
        raise DegenerateBoxError(f"unusable box height {det.box_h}")


__all__ = [
    "AngularBox", "AssociationConfig", "CostResult", "build_cost_matrix", "check_box",
    "cost_arrays", "cost_arrays_compiled", "local_frame", "mahalanobis_sq", "matching_cost", "solve_assignment",
    "spherical_iou", "spherical_iou_arrays",
]
