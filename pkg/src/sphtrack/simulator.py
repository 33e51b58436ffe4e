"""Deterministic synthetic panoramic camera + rotating LiDAR observations.

Targets move on analytic trajectories in the (static) sensor frame.  Camera
frames arrive at ``camera_rate``; the LiDAR azimuth sweeps ``2 pi`` every
``sweep_period`` seconds and yields one aggregated depth per target at the
instant the beam passes the target's azimuth.  All randomness comes from a
Philox counter-based generator keyed by the seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import angle_between, exp_map, make_tangent_basis, normalize, wrap_angle
from .measurements import CameraDetection, LidarDepthObs, angular_gain
from .tracker import FrameInput

PATTERNS = ("static", "circle_cw", "circle_ccw", "radial")


@dataclass(frozen=True)
class TargetSpec:
    id: int
    pattern: str = "static"
    position: tuple[float, float, float] = (3.0, 0.0, 0.0)  # static start / reference point
    radius: float = 5.0          # circles
    speed: float = 0.5           # m/s along circles
    phase: float = 0.0           # initial azimuth (rad) for circles and radial motion
    r_min: float = 2.0           # radial oscillation
    r_max: float = 6.0
    period: float = 10.0         # radial oscillation period (s)
    z: float = 0.0               # height of the box centre in the sensor frame
    height: float = 1.7          # physical height (m)
    aspect: float = 0.4          # box width / height

    def position_at(self, t):
        """Position (m) at time(s) ``t``; broadcasts over an array of times."""
        t = np.asarray(t, dtype=float)
        if self.pattern == "static":
            p = np.broadcast_to(np.asarray(self.position, dtype=float), t.shape + (3,))
            return np.array(p)
        if self.pattern in ("circle_cw", "circle_ccw"):
            omega = self.speed / self.radius
            if self.pattern == "circle_cw":
                omega = -omega
            phi = self.phase + omega * t
            return np.stack([self.radius * np.cos(phi), self.radius * np.sin(phi),
                             np.full_like(phi, self.z)], axis=-1)
        if self.pattern == "radial":
            mid = 0.5 * (self.r_min + self.r_max)
            amp = 0.5 * (self.r_max - self.r_min)
            r = mid + amp * np.sin(2.0 * math.pi * t / self.period)
            return np.stack([r * math.cos(self.phase), r * math.sin(self.phase),
                             np.full_like(r, self.z)], axis=-1)
        raise ConfigError(f"targets[{self.id}].pattern: unknown pattern {self.pattern!r}")


@dataclass(frozen=True)
class ScenarioNoise:
    sigma_px: float = 2.0
    sigma_depth: float = 0.05
    sigma_aspect: float = 0.02
    dropout_prob: float = 0.0
    false_positive_rate: float = 0.0   # expected false detections per frame
    score_mean: float = 0.85
    score_std: float = 0.08
    fp_score_max: float = 0.5


@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float
    targets: tuple[TargetSpec, ...]
    camera_rate: float = 30.0
    sweep_period: float = 1.0
    sweep_start: float = 0.0
    img_h: float = 1000.0
    noise: ScenarioNoise = field(default_factory=ScenarioNoise)
    occlusion_angle: float = 0.0
    notes: str = ""

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.camera_rate))

    def frame_times(self) -> np.ndarray:
        return np.arange(self.n_frames) / self.camera_rate

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = [asdict(t) for t in self.targets]
        return d


def _num(d: dict, key: str, path: str, default=None, positive=False, nonneg=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"{path}{key}: missing required field")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{path}{key}: expected a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{path}{key}: must be > 0, got {v}")
    if nonneg and v < 0:
        raise ConfigError(f"{path}{key}: must be >= 0, got {v}")
    return float(v)


def scenario_from_dict(d: dict) -> Scenario:
    """Validate a scenario mapping; errors name the offending field."""
    if not isinstance(d, dict):
        raise ConfigError("scenario: expected a JSON object")
    name = d.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError("name: missing or not a string")
    raw_targets = d.get("targets")
    if not isinstance(raw_targets, list) or not raw_targets:
        raise ConfigError("targets: expected a non-empty list")
    targets = []
    for k, td in enumerate(raw_targets):
        path = f"targets[{k}]."
        if not isinstance(td, dict):
            raise ConfigError(f"targets[{k}]: expected an object")
        pattern = td.get("pattern", "static")
        if pattern not in PATTERNS:
            raise ConfigError(f"{path}pattern: unknown pattern {pattern!r} (expected one of {PATTERNS})")
        pos = td.get("position", [3.0, 0.0, 0.0])
        if (not isinstance(pos, list) or len(pos) != 3
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pos)):
            raise ConfigError(f"{path}position: expected three numbers")
        tid = td.get("id", k + 1)
        if not isinstance(tid, int) or isinstance(tid, bool):
            raise ConfigError(f"{path}id: expected an integer")
        t = TargetSpec(
            id=tid, pattern=pattern, position=tuple(float(v) for v in pos),
            radius=_num(td, "radius", path, 5.0, positive=True),
            speed=_num(td, "speed", path, 0.5, nonneg=True),
            phase=_num(td, "phase", path, 0.0),
            r_min=_num(td, "r_min", path, 2.0, positive=True),
            r_max=_num(td, "r_max", path, 6.0, positive=True),
            period=_num(td, "period", path, 10.0, positive=True),
            z=_num(td, "z", path, 0.0),
            height=_num(td, "height", path, 1.7, positive=True),
            aspect=_num(td, "aspect", path, 0.4, positive=True),
        )
        if t.pattern == "radial" and t.r_max < t.r_min:
            raise ConfigError(f"{path}r_max: must be >= r_min")
        if t.pattern == "static" and np.linalg.norm(t.position) < 0.5:
            raise ConfigError(f"{path}position: target too close to the sensor")
        targets.append(t)
    if len({t.id for t in targets}) != len(targets):
        raise ConfigError("targets: duplicate target ids")
    nd = d.get("noise", {})
    if not isinstance(nd, dict):
        raise ConfigError("noise: expected an object")
    noise = ScenarioNoise(
        sigma_px=_num(nd, "sigma_px", "noise.", 2.0, nonneg=True),
        sigma_depth=_num(nd, "sigma_depth", "noise.", 0.05, nonneg=True),
        sigma_aspect=_num(nd, "sigma_aspect", "noise.", 0.02, nonneg=True),
        dropout_prob=_num(nd, "dropout_prob", "noise.", 0.0, nonneg=True),
        false_positive_rate=_num(nd, "false_positive_rate", "noise.", 0.0, nonneg=True),
        score_mean=_num(nd, "score_mean", "noise.", 0.85, nonneg=True),
        score_std=_num(nd, "score_std", "noise.", 0.08, nonneg=True),
        fp_score_max=_num(nd, "fp_score_max", "noise.", 0.5, nonneg=True),
    )
    if noise.dropout_prob > 1:
        raise ConfigError("noise.dropout_prob: must lie in [0, 1]")
    notes = d.get("notes", "")
    return Scenario(
        name=name,
        duration=_num(d, "duration", "", positive=True),
        targets=tuple(targets),
        camera_rate=_num(d, "camera_rate", "", 30.0, positive=True),
        sweep_period=_num(d, "sweep_period", "", 1.0, positive=True),
        sweep_start=_num(d, "sweep_start", "", 0.0),
        img_h=_num(d, "img_h", "", 1000.0, positive=True),
        noise=noise,
        occlusion_angle=_num(d, "occlusion_angle", "", 0.0, nonneg=True),
        notes=notes if isinstance(notes, str) else str(notes),
    )


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        p = Path(path)
        # bare canned names resolve against the shipped configs
        if not p.suffix and p.parent == Path("."):
            return canned_scenario(str(p))
        raise
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(data)


CANNED = ("seq1_static", "seq2_cw", "seq3_ccw", "seq4_mixed_occlusion", "seq5_radial_fast")
DYNAMIC = CANNED[1:]


def canned_scenario(name: str) -> Scenario:
    ref = resources.files("sphtrack") / "scenarios" / f"{name}.json"
    if not ref.is_file():
        raise ConfigError(f"unknown canned scenario {name!r}")
    return scenario_from_dict(json.loads(ref.read_text(encoding="utf-8")))


def canned_path(name: str) -> Path:
    return Path(str(resources.files("sphtrack") / "scenarios" / f"{name}.json"))


# -- ground truth -------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruthRecord:
    t: float
    target_id: int
    position: np.ndarray


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent Philox stream ``stream`` derived from ``seed``."""
    seq = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seq.spawn(stream + 1)[stream]))


def generate_ground_truth(scenario: Scenario, seed: int = 0) -> list[GroundTruthRecord]:
    """One record per target per camera frame.

    Trajectories are analytic, so ``seed`` does not influence the result; it is
    accepted for interface symmetry with the observation generators.
    """
    times = scenario.frame_times()
    per_target = [t.position_at(times) for t in scenario.targets]
    out = []
    for k, tk in enumerate(times):
        for spec, pos in zip(scenario.targets, per_target):
            out.append(GroundTruthRecord(float(tk), spec.id, pos[k].copy()))
    return out


# -- camera ---------------------------------------------------------------------

def occluded_mask(positions: np.ndarray, occlusion_angle: float) -> np.ndarray:
    """True where a nearer target lies within ``occlusion_angle`` of the same bearing."""
    n = positions.shape[0]
    out = np.zeros(n, dtype=bool)
    if occlusion_angle <= 0 or n < 2:
        return out
    rng_ = np.linalg.norm(positions, axis=1)
    g = positions / rng_[:, None]
    for i in range(n):
        for j in range(n):
            if i != j and rng_[j] < rng_[i] and angle_between(g[i], g[j]) < occlusion_angle:
                out[i] = True
                break
    return out


def render_camera_frame(scenario: Scenario, positions: np.ndarray, t: float,
                        rng: np.random.Generator) -> list[CameraDetection]:
    """Detections for one camera frame given true positions ``(n_targets, 3)``."""
    noise = scenario.noise
    f = angular_gain(scenario.img_h)
    sigma_dir = noise.sigma_px / f
    occluded = occluded_mask(positions, scenario.occlusion_angle)
    dets = []
    for k, spec in enumerate(scenario.targets):
        # fixed number of draws per target keeps streams aligned across configs
        u_drop = rng.random()
        e = rng.standard_normal(4)
        s = rng.standard_normal()
        if occluded[k] or u_drop < noise.dropout_prob:
            continue
        p = positions[k]
        r = float(np.linalg.norm(p))
        g = p / r
        if sigma_dir > 0:
            g = exp_map(g, make_tangent_basis(g), sigma_dir * e[:2])
        box_h = 2.0 * math.atan(spec.height / (2.0 * r)) * f + noise.sigma_px * e[2]
        box_h = min(max(box_h, 1e-3), scenario.img_h)
        aspect = max(spec.aspect + noise.sigma_aspect * e[3], 0.05)
        score = min(max(noise.score_mean + noise.score_std * s, 0.0), 1.0)
        dets.append(CameraDetection(t, g, aspect, box_h, score))
    n_fp = rng.poisson(noise.false_positive_rate) if noise.false_positive_rate > 0 else 0
    for _ in range(n_fp):
        v = rng.standard_normal(3)
        g = normalize(v)
        box_h = float(rng.uniform(30.0, 250.0))
        aspect = float(rng.uniform(0.3, 0.7))
        score = float(rng.uniform(0.0, noise.fp_score_max))
        dets.append(CameraDetection(t, g, aspect, box_h, score))
    return dets


# -- lidar ------------------------------------------------------------------------

def sweep_azimuth(scenario: Scenario, t):
    return scenario.sweep_start + 2.0 * math.pi * np.asarray(t, dtype=float) / scenario.sweep_period


def _offset(scenario: Scenario, spec: TargetSpec, t: float) -> float:
    p = spec.position_at(t)
    return float(wrap_angle(sweep_azimuth(scenario, t) - math.atan2(p[1], p[0])))


def sweep_crossings(scenario: Scenario, spec: TargetSpec, t0: float, t1: float,
                    include_start: bool = False) -> list[float]:
    """Times in ``(t0, t1]`` at which the beam azimuth equals the target azimuth.

    Candidate intervals come from the unwrapped beam-minus-target angle on a
    grid finer than a camera frame; each is refined by bisection.
    """
    step = min(1.0 / scenario.camera_rate, scenario.sweep_period / 720.0)
    n = max(int(math.ceil((t1 - t0) / step)), 1)
    ts = np.linspace(t0, t1, n + 1)
    p = spec.position_at(ts)
    rel = sweep_azimuth(scenario, ts) - np.unwrap(np.arctan2(p[:, 1], p[:, 0]))
    turns = np.floor(rel / (2.0 * math.pi))
    out = []
    if include_start and _offset(scenario, spec, t0) == 0.0:
        out.append(float(t0))
    for k in np.nonzero(np.diff(turns) > 0)[0]:
        a, b = float(ts[k]), float(ts[k + 1])
        if _offset(scenario, spec, b) == 0.0:
            out.append(b)
            continue
        for _ in range(200):
            mid = 0.5 * (a + b)
            if mid <= a or mid >= b:
                break
            if _offset(scenario, spec, mid) < 0.0:
                a = mid
            else:
                b = mid
        out.append(b)
    return out


def render_lidar_sweep(scenario: Scenario, t0: float, t1: float, rng: np.random.Generator,
                       include_start: bool = False) -> list[LidarDepthObs]:
    """Aggregated depth returns for beam crossings in ``(t0, t1]``, time-ordered."""
    events = []
    for k, spec in enumerate(scenario.targets):
        for tc in sweep_crossings(scenario, spec, t0, t1, include_start):
            events.append((tc, k))
    events.sort()
    noise = scenario.noise
    out = []
    for tc, k in events:
        e = rng.standard_normal()
        positions = np.stack([s.position_at(tc) for s in scenario.targets])
        if occluded_mask(positions, scenario.occlusion_angle)[k]:
            continue
        p = positions[k]
        depth = float(np.linalg.norm(p)) + noise.sigma_depth * e
        out.append(LidarDepthObs(float(tc), math.atan2(p[1], p[0]), max(depth, 1e-3), noise.sigma_depth))
    return out


# -- full run -----------------------------------------------------------------------

@dataclass
class SimulationResult:
    scenario: Scenario
    seed: int
    ground_truth: list[GroundTruthRecord]
    frames: list[FrameInput]


def simulate(scenario: Scenario, seed: int = 0) -> SimulationResult:
    """Ground truth plus one :class:`FrameInput` per camera frame.

    LiDAR returns are grouped into the first camera frame at or after their
    timestamp.
    """
    cam_rng = make_rng(seed, 0)
    lidar_rng = make_rng(seed, 1)
    times = scenario.frame_times()
    gt = generate_ground_truth(scenario, seed)
    pos = np.stack([s.position_at(times) for s in scenario.targets], axis=1)  # (frames, targets, 3)
    lidar = render_lidar_sweep(scenario, 0.0, float(times[-1]), lidar_rng, include_start=True)
    frames = []
    li = 0
    for k, tk in enumerate(times):
        dets = render_camera_frame(scenario, pos[k], float(tk), cam_rng)
        batch = []
        while li < len(lidar) and lidar[li].t <= tk:
            batch.append(lidar[li])
            li += 1
        frames.append(FrameInput(float(tk), dets, batch))
    return SimulationResult(scenario, seed, gt, frames)
