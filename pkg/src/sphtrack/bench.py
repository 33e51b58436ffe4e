"""Step-latency measurement on a fixed synthetic workload."""

from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from .simulator import Scenario, ScenarioNoise, TargetSpec, simulate


def latency_scenario(n_tracks: int = 10, n_detections: int = 20, duration: float = 60.0) -> Scenario:
    """``n_tracks`` walkers on circles around the sensor plus clutter.

    Clutter arrives at ``n_detections - n_tracks`` false positives per frame on
    average, so a frame carries about ``n_detections`` detections.
    """
    targets = []
    for k in range(n_tracks):
        ccw = k % 2 == 0
        targets.append(TargetSpec(
            id=k + 1, pattern="circle_ccw" if ccw else "circle_cw",
            radius=3.0 + 0.25 * k, speed=0.5 + 0.05 * k,
            phase=2.0 * math.pi * k / n_tracks, z=-0.6,
            height=1.6 + 0.03 * k, aspect=0.4))
    noise = ScenarioNoise(dropout_prob=0.0, false_positive_rate=float(max(n_detections - n_tracks, 0)))
    return Scenario(name=f"latency_{n_tracks}x{n_detections}", duration=duration,
                    targets=tuple(targets), noise=noise, occlusion_angle=0.0)


def measure_steps(step: Callable, frames, warmup: int = 0) -> np.ndarray:
    """Wall-clock seconds of ``step(frame)`` for each frame after ``warmup``."""
    for fr in frames[:warmup]:
        step(fr)
    out = np.empty(max(len(frames) - warmup, 0))
    clock = time.perf_counter
    for k, fr in enumerate(frames[warmup:]):
        t0 = clock()
        step(fr)
        out[k] = clock() - t0
    return out


def latency_percentiles(seconds: np.ndarray) -> dict:
    ms = 1e3 * np.asarray(seconds)
    return {
        "n_steps": int(ms.size),
        "median_ms": float(np.median(ms)) if ms.size else None,
        "p90_ms": float(np.percentile(ms, 90)) if ms.size else None,
        "p99_ms": float(np.percentile(ms, 99)) if ms.size else None,
        "max_ms": float(ms.max()) if ms.size else None,
    }


def tracker_latency(make_tracker: Callable, n_tracks: int = 10, n_detections: int = 20,
                    n_steps: int = 10_000, seed: int = 0, warmup: int = 30) -> dict:
    """Latency percentiles of a fresh tracker over ``n_steps`` frames of the workload."""
    sc = latency_scenario(n_tracks, n_detections, duration=(n_steps + warmup) / 30.0)
    sim = simulate(sc, seed)
    trk = make_tracker()
    lat = measure_steps(trk.step, sim.frames, warmup)
    out = latency_percentiles(lat)
    out.update(n_tracks=n_tracks, n_detections=n_detections, seed=seed)
    return out
