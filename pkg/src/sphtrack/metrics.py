"""Planar RMSE and identity-switch metrics against ground truth."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import EmptyLogError, NoMatchesError


class Estimate(NamedTuple):
    t: float
    id: int
    xy: tuple[float, float]


class Truth(NamedTuple):
    t: float
    target_id: int
    xy: tuple[float, float]


@dataclass
class Matching:
    """Per-frame GT-to-estimate assignment.

    ``frames[k]`` maps ground-truth id to ``(track_id, planar error vector)``.
    """

    times: np.ndarray
    target_ids: list[int]
    frames: list[dict[int, tuple[int, tuple[float, float]]]] = field(default_factory=list)


def as_estimates(records: Iterable) -> list[Estimate]:
    out = []
    for r in records:
        if isinstance(r, Estimate):
            out.append(r)
        elif isinstance(r, dict):
            xy = r.get("planar_xy") or r["position"][:2]
            out.append(Estimate(float(r["t"]), int(r["id"]), (float(xy[0]), float(xy[1]))))
        else:
            p = r.position
            out.append(Estimate(float(r.t), int(r.id), (float(p[0]), float(p[1]))))
    return out


def as_truths(records: Iterable) -> list[Truth]:
    out = []
    for r in records:
        if isinstance(r, Truth):
            out.append(r)
        elif isinstance(r, dict):
            p = r["position"]
            out.append(Truth(float(r["t"]), int(r["target_id"]), (float(p[0]), float(p[1]))))
        else:
            p = r.position
            out.append(Truth(float(r.t), int(r.target_id), (float(p[0]), float(p[1]))))
    return out


def match_tracks_to_gt(tracks: Iterable, gt: Iterable, radius: float = 1.0) -> Matching:
    """Greedy nearest-neighbour matching in the x-y plane, frame by frame.

    Estimates are attached to the ground-truth frame nearest in time when
    within half a frame interval.  Pairs are taken in order of increasing
    distance, ties broken by lower ground-truth id and then lower track id.
    """
    est = as_estimates(tracks)
    truth = as_truths(gt)
    if not truth:
        raise EmptyLogError("ground-truth log is empty")
    times = np.array(sorted({r.t for r in truth}))
    half = 0.5 * float(np.median(np.diff(times))) if len(times) > 1 else 0.5
    gt_by_frame: list[list[Truth]] = [[] for _ in times]
    for r in truth:
        gt_by_frame[int(np.searchsorted(times, r.t))].append(r)
    est_by_frame: list[list[Estimate]] = [[] for _ in times]
    for e in est:
        k = int(np.searchsorted(times, e.t))
        cands = [i for i in (k - 1, k) if 0 <= i < len(times)]
        if not cands:
            continue
        best = min(cands, key=lambda i: (abs(times[i] - e.t), i))
        if abs(times[best] - e.t) <= half + 1e-9:
            est_by_frame[best].append(e)

    matching = Matching(times, sorted({r.target_id for r in truth}))
    for gts, ests in zip(gt_by_frame, est_by_frame):
        pairs = []
        for g in gts:
            for e in ests:
                dx, dy = e.xy[0] - g.xy[0], e.xy[1] - g.xy[1]
                d = math.hypot(dx, dy)
                if d <= radius:
                    pairs.append((d, g.target_id, e.id, (dx, dy)))
        pairs.sort(key=lambda p: (p[0], p[1], p[2]))
        used_g, used_e, frame = set(), set(), {}
        for d, gid, tid, err in pairs:
            if gid in used_g or tid in used_e:
                continue
            used_g.add(gid)
            used_e.add(tid)
            frame[gid] = (tid, err)
        matching.frames.append(frame)
    return matching


def planar_rmse(matching: Matching) -> dict[int, float]:
    """Per-target RMSE (m) of the planar error over matched frames."""
    sq = defaultdict(list)
    for frame in matching.frames:
        for gid, (_, (dx, dy)) in frame.items():
            sq[gid].append(dx * dx + dy * dy)
    missing = [g for g in matching.target_ids if not sq[g]]
    if missing:
        raise NoMatchesError(f"targets without any matched frame: {missing}")
    return {g: math.sqrt(math.fsum(sq[g]) / len(sq[g])) for g in matching.target_ids}


def identity_switches(matching: Matching) -> tuple[dict[int, int], int]:
    """Per-target count of matched-id changes, and the number of distinct matched ids."""
    last: dict[int, int] = {}
    switches = {g: 0 for g in matching.target_ids}
    ids = set()
    for frame in matching.frames:
        for gid, (tid, _) in frame.items():
            ids.add(tid)
            if gid in last and last[gid] != tid:
                switches[gid] += 1
            last[gid] = tid
    return switches, len(ids)


def coverage(matching: Matching) -> dict[int, float]:
    """Fraction of frames matched, counted from each target's first match."""
    first: dict[int, int] = {}
    hits = defaultdict(int)
    for k, frame in enumerate(matching.frames):
        for gid in frame:
            first.setdefault(gid, k)
            hits[gid] += 1
    n = len(matching.frames)
    return {g: (hits[g] / (n - first[g]) if g in first else 0.0) for g in matching.target_ids}


def planar_errors(matching: Matching) -> list[tuple[float, int, int, float]]:
    """Rows ``(t, target_id, track_id, planar error)`` for every matched pair."""
    rows = []
    for t, frame in zip(matching.times, matching.frames):
        for gid in sorted(frame):
            tid, (dx, dy) = frame[gid]
            rows.append((float(t), gid, tid, math.hypot(dx, dy)))
    return rows


def evaluate(tracks: Iterable, gt: Iterable, radius: float = 1.0) -> dict:
    """All metrics in one JSON-ready mapping."""
    m = match_tracks_to_gt(tracks, gt, radius)
    try:
        rmse = planar_rmse(m)
    except NoMatchesError:
        rmse = None
    if rmse is None:
        rmse_by = {str(g): None for g in m.target_ids}
        for g, v in _partial_rmse(m).items():
            rmse_by[str(g)] = v
    else:
        rmse_by = {str(g): v for g, v in rmse.items()}
    sw, max_id = identity_switches(m)
    cov = coverage(m)
    return {
        "rmse_m": rmse_by,
        "id_switches": {str(g): v for g, v in sw.items()},
        "id_switches_total": sum(sw.values()),
        "max_id_total": max_id,
        "coverage": {str(g): v for g, v in cov.items()},
        "match_radius_m": radius,
        "n_frames": len(m.frames),
    }


def _partial_rmse(m: Matching) -> dict[int, float]:
    out = {}
    for g in m.target_ids:
        sq = [dx * dx + dy * dy for f in m.frames if g in f for dx, dy in [f[g][1]]]
        if sq:
            out[g] = math.sqrt(math.fsum(sq) / len(sq))
    return out
