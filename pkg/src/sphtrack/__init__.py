"""Multi-object tracking with bearings on the unit sphere."""

from __future__ import annotations

__version__ = "0.1.0"

from .geometry import exp_map, log_map, make_tangent_basis, parallel_transport
from .simulator import Scenario, canned_scenario, load_scenario, simulate
from .tracker import FrameInput, SphericalTracker, TrackerConfig, TrackOutput, tracker_step
from .baseline import PixelTracker, baseline_step
from .metrics import evaluate

__all__ = [
    "__version__", "exp_map", "log_map", "make_tangent_basis", "parallel_transport",
    "Scenario", "canned_scenario", "load_scenario", "simulate",
    "FrameInput", "SphericalTracker", "TrackerConfig", "TrackOutput", "tracker_step",
    "PixelTracker", "baseline_step", "evaluate",
]
