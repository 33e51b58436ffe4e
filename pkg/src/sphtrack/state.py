"""Track state layout, constant-velocity transition and process noise."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import NegativeDtError, NonPositiveDtError

STATE_DIM = 10

# Frozen state layout: w1, w2, w1_dot, w2_dot, aspect, aspect_dot, box_h, box_h_dot, depth, depth_dot
W1, W2, W1_DOT, W2_DOT = 0, 1, 2, 3
ASPECT, ASPECT_DOT = 4, 5
BOX_H, BOX_H_DOT = 6, 7
DEPTH, DEPTH_DOT = 8, 9

STATE_NAMES = ("w1", "w2", "w1_dot", "w2_dot", "aspect", "aspect_dot",
               "box_h", "box_h_dot", "depth", "depth_dot")

# (value, rate) index pairs of the five CV blocks
CV_PAIRS = ((W1, W1_DOT), (W2, W2_DOT), (ASPECT, ASPECT_DOT), (BOX_H, BOX_H_DOT), (DEPTH, DEPTH_DOT))

# rows/cols rotated together when the tangent frame changes
DIRECTION_IDX = np.array([W1, W2, W1_DOT, W2_DOT])

DEPTH_MIN = 0.1
ASPECT_MIN = 1e-3


@dataclass(frozen=True)
class ProcessNoise:
    """Per-block white-noise acceleration standard deviations."""

    sigma_w: float = 0.5        # rad/s^2
    sigma_aspect: float = 0.1   # 1/s^2
    sigma_h: float = 20.0       # px/s^2
    sigma_d: float = 1.0        # m/s^2

    def per_pair(self) -> tuple[float, ...]:
        return (self.sigma_w, self.sigma_w, self.sigma_aspect, self.sigma_h, self.sigma_d)


class TrackStatus(str, enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"


@dataclass
class TrackHypothesis:
    """One tracked target: filtered state plus its chart on the sphere.

    ``x``/``P`` live in the tangent chart anchored at ``g_ref`` with basis
    ``basis``.  ``height_est`` is the physical target height (m) used by the
    box-height/depth conversions; it is estimated outside the filter and
    ``height_var`` is its variance (m^2), zero meaning "known exactly".
    """

    id: int
    x: np.ndarray
    P: np.ndarray
    g_ref: np.ndarray
    basis: np.ndarray
    height_est: float = 1.7
    height_var: float = 0.0
    status: TrackStatus = TrackStatus.TENTATIVE
    hits: int = 1
    misses: int = 0
    last_update: float = 0.0
    age: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def depth(self) -> float:
        return float(self.x[DEPTH])

    def bearing(self) -> np.ndarray:
        """Current bearing estimate, including any un-finalized chart offset."""
        from .geometry import exp_map

        w = self.x[:2]
        if w[0] == 0.0 and w[1] == 0.0:
            return self.g_ref
        return exp_map(self.g_ref, self.basis, w)

    def position(self) -> np.ndarray:
        return self.bearing() * self.x[DEPTH]


def build_transition(dt: float) -> np.ndarray:
    """Block-diagonal CV transition; each (value, rate) pair gets ``[[1, dt], [0, 1]]``."""
    if dt < 0:
        raise NegativeDtError(f"dt must be >= 0, got {dt}")
    return _transition(float(dt)).copy()


def build_process_noise(dt: float, sigmas: ProcessNoise | tuple[float, ...] = ProcessNoise()) -> np.ndarray:
    """Discrete white-noise-acceleration covariance, one 2x2 block per CV pair."""
    if dt <= 0:
        raise NonPositiveDtError(f"dt must be > 0, got {dt}")
    if isinstance(sigmas, ProcessNoise):
        per_pair = sigmas.per_pair()
    else:
        per_pair = tuple(float(s) for s in sigmas)
        if len(per_pair) == 4:
            per_pair = (per_pair[0],) + per_pair
    if len(per_pair) != len(CV_PAIRS):
        raise ValueError("need one sigma per block (w, aspect, h, d)")
    if any(not s > 0 for s in per_pair):
        raise ValueError(f"process noise sigmas must be > 0, got {per_pair}")
    return _process_noise(float(dt), per_pair).copy()


@lru_cache(maxsize=64)
def _transition(dt: float) -> np.ndarray:
    F = np.eye(STATE_DIM)
    for i, j in CV_PAIRS:
        F[i, j] = dt
    F.flags.writeable = False
    return F


@lru_cache(maxsize=64)
def _process_noise(dt: float, per_pair: tuple[float, ...]) -> np.ndarray:
    Q = np.zeros((STATE_DIM, STATE_DIM))
    block = np.array([[dt**4 / 4.0, dt**3 / 2.0], [dt**3 / 2.0, dt**2]])
    for (i, j), s in zip(CV_PAIRS, per_pair):
        idx = np.ix_([i, j], [i, j])
        Q[idx] = s * s * block
    Q.flags.writeable = False
    return Q


def cached_transition(dt: float) -> np.ndarray:
    """Read-only shared transition matrix (no copy); for hot loops."""
    if dt < 0:
        raise NegativeDtError(f"dt must be >= 0, got {dt}")
    return _transition(float(dt))


def cached_process_noise(dt: float, sigmas: ProcessNoise) -> np.ndarray:
    if dt <= 0:
        raise NonPositiveDtError(f"dt must be > 0, got {dt}")
    return _process_noise(float(dt), sigmas.per_pair())
