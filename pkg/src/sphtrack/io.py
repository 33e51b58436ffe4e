"""JSONL logs, atomic file writes and tracker-config loading.

Every stream is UTF-8 JSON, one object per line, each carrying a
``schema_version`` of the form ``"MAJOR.MINOR"``.  Readers accept any minor
version of a known major and reject everything else.  Timestamps are float
seconds from scenario start, positions are metres and bearings are unit
3-vectors.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .association import AssociationConfig
from .errors import ConfigError, IoError, SchemaError
from .measurements import CameraDetection, LidarDepthObs, MeasurementNoise
from .simulator import GroundTruthRecord
from .state import ProcessNoise
from .tracker import FrameInput, InitNoise, TrackerConfig, TrackOutput

SCHEMA_VERSION = "1.0"
SUPPORTED_MAJOR = 1


# -- raw files ------------------------------------------------------------------

def _dumps(obj: Any, indent: int | None = None) -> str:
    return json.dumps(obj, sort_keys=True, indent=indent, allow_nan=False, ensure_ascii=False)


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to a temp file in the target directory, then rename it into place."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    except OSError as exc:
        raise IoError(f"{path}: cannot write ({exc.strerror or exc})") from exc
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        if isinstance(exc, OSError):
            raise IoError(f"{path}: cannot write ({exc.strerror or exc})") from exc
        raise
    return path


def write_json(path, obj: Any) -> Path:
    return atomic_write_text(path, _dumps(obj, indent=2) + "\n")


def read_json(path) -> Any:
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc


def write_jsonl(path, records: Iterable[dict]) -> Path:
    """Atomically write records, stamping each with the current schema version."""
    lines = []
    for rec in records:
        out = {"schema_version": SCHEMA_VERSION}
        out.update(rec)
        lines.append(_dumps(out))
    return atomic_write_text(path, "".join(line + "\n" for line in lines))


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise IoError(f"{path}: no such file") from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise IoError(f"{path}: cannot read ({exc})") from exc


def check_schema_version(value, where: str) -> None:
    if not isinstance(value, str):
        raise SchemaError(f"{where}: schema_version missing or not a string")
    major, _, minor = value.partition(".")
    if not (major.isdigit() and (minor == "" or minor.isdigit())):
        raise SchemaError(f"{where}: malformed schema_version {value!r}")
    if int(major) != SUPPORTED_MAJOR:
        raise SchemaError(f"{where}: unsupported schema major version {major} "
                          f"(this reader understands {SUPPORTED_MAJOR}.x)")


def read_jsonl(path) -> list[dict]:
    """Records of a JSONL file; blank lines are skipped."""
    out = []
    for n, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        where = f"{path}:{n}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{where}: invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise SchemaError(f"{where}: expected a JSON object")
        check_schema_version(rec.get("schema_version"), where)
        out.append(rec)
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                h.update(chunk)
    except OSError as exc:
        raise IoError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    return h.hexdigest()


def canonical_hash(obj: Any) -> str:
    """SHA-256 of the key-sorted compact JSON form of ``obj``."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# -- record fields ------------------------------------------------------------------

def _field(rec: dict, key: str, where: str):
    if key not in rec:
        raise SchemaError(f"{where}: missing field {key!r}")
    return rec[key]


def _number(rec: dict, key: str, where: str) -> float:
    v = _field(rec, key, where)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(f"{where}: field {key!r} must be a finite number, got {v!r}")
    return float(v)


def _vector(rec: dict, key: str, where: str, n: int) -> np.ndarray:
    v = _field(rec, key, where)
    if (not isinstance(v, list) or len(v) != n
            or any(isinstance(a, bool) or not isinstance(a, (int, float)) for a in v)):
        raise SchemaError(f"{where}: field {key!r} must be a list of {n} numbers")
    out = np.array(v, dtype=float)
    if not np.isfinite(out).all():
        raise SchemaError(f"{where}: field {key!r} has non-finite entries")
    return out


def _floats(a) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


# -- ground truth -------------------------------------------------------------------

def gt_to_record(r: GroundTruthRecord) -> dict:
    return {"t": float(r.t), "target_id": int(r.target_id), "position": _floats(r.position)}


def gt_from_record(rec: dict, where: str = "gt") -> GroundTruthRecord:
    tid = _field(rec, "target_id", where)
    if isinstance(tid, bool) or not isinstance(tid, int):
        raise SchemaError(f"{where}: field 'target_id' must be an integer")
    return GroundTruthRecord(_number(rec, "t", where), tid, _vector(rec, "position", where, 3))


# -- detections and LiDAR -------------------------------------------------------------

def detection_to_dict(d: CameraDetection) -> dict:
    return {"bearing": _floats(d.bearing), "aspect": float(d.aspect),
            "box_h": float(d.box_h), "score": float(d.score)}


def frame_to_record(frame: FrameInput) -> dict:
    """One camera-frame group; the LiDAR returns go to their own stream."""
    return {"t": float(frame.t), "detections": [detection_to_dict(d) for d in frame.detections]}


def lidar_to_record(o: LidarDepthObs) -> dict:
    return {"t": float(o.t), "azimuth": float(o.azimuth), "depth": float(o.depth),
            "spread": float(o.spread)}


def frame_from_record(rec: dict, where: str = "detections") -> tuple[float, list[CameraDetection]]:
    t = _number(rec, "t", where)
    raw = _field(rec, "detections", where)
    if not isinstance(raw, list):
        raise SchemaError(f"{where}: field 'detections' must be a list")
    dets = []
    for k, d in enumerate(raw):
        w = f"{where} detection {k}"
        if not isinstance(d, dict):
            raise SchemaError(f"{w}: expected an object")
        try:
            dets.append(CameraDetection(t, _vector(d, "bearing", w, 3), _number(d, "aspect", w),
                                        _number(d, "box_h", w), _number(d, "score", w)))
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"{w}: {exc}") from exc
    return t, dets


def lidar_from_record(rec: dict, where: str = "lidar") -> LidarDepthObs:
    spread = _number(rec, "spread", where) if "spread" in rec else 0.0
    try:
        return LidarDepthObs(_number(rec, "t", where), _number(rec, "azimuth", where),
                             _number(rec, "depth", where), spread)
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{where}: {exc}") from exc


def assemble_frames(frame_records: list[dict], lidar_records: list[dict],
                    det_path="detections", lidar_path="lidar") -> list[FrameInput]:
    """Rebuild tracker inputs: each LiDAR return joins the first camera frame at or after it.

    Returns after the last camera frame are dropped, matching the simulator.
    """
    frames = []
    for n, rec in enumerate(frame_records, start=1):
        t, dets = frame_from_record(rec, f"{det_path}:{n}")
        if frames and t < frames[-1].t:
            raise SchemaError(f"{det_path}:{n}: frame time {t} precedes {frames[-1].t}")
        frames.append(FrameInput(t, dets, []))
    obs = [lidar_from_record(r, f"{lidar_path}:{n}") for n, r in enumerate(lidar_records, start=1)]
    for a, b in zip(obs, obs[1:]):
        if b.t < a.t:
            raise SchemaError(f"{lidar_path}: returns are not time-sorted ({b.t} after {a.t})")
    k = 0
    for o in obs:
        while k < len(frames) and frames[k].t < o.t:
            k += 1
        if k == len(frames):
            break
        frames[k].lidar_obs.append(o)
    return frames


# -- tracks -------------------------------------------------------------------------------

def track_to_record(o: TrackOutput) -> dict:
    return {"t": float(o.t), "id": int(o.id), "bearing": _floats(o.bearing), "depth": float(o.depth),
            "planar_xy": _floats(o.position[:2]), "position": _floats(o.position),
            "cov_diag": _floats(o.cov_diag)}


def track_from_record(rec: dict, where: str = "tracks") -> TrackOutput:
    tid = _field(rec, "id", where)
    if isinstance(tid, bool) or not isinstance(tid, int):
        raise SchemaError(f"{where}: field 'id' must be an integer")
    xy = _vector(rec, "planar_xy", where, 2)
    pos = _vector(rec, "position", where, 3) if "position" in rec else np.array([xy[0], xy[1], 0.0])
    return TrackOutput(_number(rec, "t", where), tid, _vector(rec, "bearing", where, 3),
                       _number(rec, "depth", where), pos, _vector(rec, "cov_diag", where, 10))


def read_tracks(path) -> list[TrackOutput]:
    return [track_from_record(r, f"{path}:{n}") for n, r in enumerate(read_jsonl(path), start=1)]


def read_gt(path) -> list[GroundTruthRecord]:
    return [gt_from_record(r, f"{path}:{n}") for n, r in enumerate(read_jsonl(path), start=1)]


# -- tracker configuration ------------------------------------------------------------------

_SECTIONS = {"assoc": AssociationConfig, "noise": MeasurementNoise,
             "process": ProcessNoise, "init": InitNoise}


def _coerce(value, hint, path: str):
    # hints arrive as strings under postponed evaluation
    hint = str(hint)
    if hint == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if value is None and "None" in hint:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{path}: expected a finite number, got {value!r}")
    if hint == "int":
        if float(value) != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigError(f"{where}: unknown field")
        if key in _SECTIONS and cls is TrackerConfig:
            kwargs[key] = _build(_SECTIONS[key], value, where)
        else:
            kwargs[key] = _coerce(value, fields[key].type, where)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def tracker_config_from_dict(data: dict | None) -> TrackerConfig:
    """Partial overrides on top of the defaults; unknown or mistyped fields raise ConfigError."""
    return _build(TrackerConfig, data or {}, "")


def load_tracker_config(path) -> TrackerConfig:
    if path is None:
        return TrackerConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"{path}: cannot read config ({exc.strerror or exc})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return tracker_config_from_dict(data)


def effective_config(cfg: TrackerConfig) -> dict:
    """Every field with defaults resolved, suitable for a manifest."""
    d = dataclasses.asdict(cfg)
    d["noise"]["px_per_rad"] = cfg.noise.f_ang
    return d
