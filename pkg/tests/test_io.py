from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest

from sphtrack import io
from sphtrack.errors import ConfigError, IoError, SchemaError
from sphtrack.simulator import canned_scenario, simulate
from sphtrack.tracker import SphericalTracker, TrackerConfig


@pytest.fixture(scope="module")
def short_sim():
    sc = canned_scenario("seq2_cw")
    return simulate(dataclasses.replace(sc, duration=4.0), seed=3)


def test_jsonl_round_trip_stamps_version(tmp_path):
    p = io.write_jsonl(tmp_path / "a.jsonl", [{"t": 0.5, "x": [1, 2]}, {"t": 1.0}])
    recs = io.read_jsonl(p)
    assert [r["schema_version"] for r in recs] == ["1.0", "1.0"]
    assert recs[0]["x"] == [1, 2]
    assert p.read_text().endswith("\n")


def test_minor_versions_accepted_major_rejected(tmp_path):
    p = tmp_path / "v.jsonl"
    p.write_text('{"schema_version": "1.7", "t": 0}\n\n')
    assert len(io.read_jsonl(p)) == 1
    p.write_text('{"schema_version": "2.0", "t": 0}\n')
    with pytest.raises(SchemaError, match="major version 2"):
        io.read_jsonl(p)
    p.write_text('{"t": 0}\n')
    with pytest.raises(SchemaError, match="schema_version"):
        io.read_jsonl(p)
    p.write_text('{"schema_version": "1.0", "t": \n')
    with pytest.raises(SchemaError, match=":1"):
        io.read_jsonl(p)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        io.read_jsonl(tmp_path / "nope.jsonl")


def test_atomic_write_replaces_and_leaves_no_temp(tmp_path):
    p = tmp_path / "sub" / "f.json"
    io.write_json(p, {"b": 1, "a": 2})
    io.write_json(p, {"c": 3})
    assert json.loads(p.read_text()) == {"c": 3}
    assert sorted(x.name for x in p.parent.iterdir()) == ["f.json"]


def test_atomic_write_failure_keeps_old_file(tmp_path):
    p = tmp_path / "f.json"
    io.write_json(p, {"ok": True})
    with pytest.raises(ValueError):
        io.write_json(p, {"bad": float("nan")})
    assert json.loads(p.read_text()) == {"ok": True}


def test_json_is_canonical(tmp_path):
    a = io.write_json(tmp_path / "a.json", {"b": 1, "a": [1.5, 2]})
    b = io.write_json(tmp_path / "b.json", {"a": [1.5, 2], "b": 1})
    assert a.read_bytes() == b.read_bytes()
    assert io.sha256_file(a) == io.sha256_file(b)
    assert io.canonical_hash({"x": 1, "y": 2}) == io.canonical_hash({"y": 2, "x": 1})


def test_frames_round_trip(tmp_path, short_sim):
    io.write_jsonl(tmp_path / "d.jsonl", (io.frame_to_record(f) for f in short_sim.frames))
    io.write_jsonl(tmp_path / "l.jsonl", (io.lidar_to_record(o) for f in short_sim.frames for o in f.lidar_obs))
    frames = io.assemble_frames(io.read_jsonl(tmp_path / "d.jsonl"), io.read_jsonl(tmp_path / "l.jsonl"))
    assert len(frames) == len(short_sim.frames)
    for a, b in zip(frames, short_sim.frames):
        assert a.t == b.t
        assert a.lidar_obs == b.lidar_obs
        for da, db in zip(a.detections, b.detections, strict=True):
            np.testing.assert_array_equal(da.bearing, db.bearing)
            assert (da.aspect, da.box_h, da.score, da.t) == (db.aspect, db.box_h, db.score, db.t)


def test_assemble_rejects_unsorted(tmp_path):
    recs = [{"t": 1.0, "detections": []}, {"t": 0.5, "detections": []}]
    with pytest.raises(SchemaError, match="precedes"):
        io.assemble_frames(recs, [])
    lid = [{"t": 0.3, "azimuth": 0.0, "depth": 2.0}, {"t": 0.1, "azimuth": 0.0, "depth": 2.0}]
    with pytest.raises(SchemaError, match="time-sorted"):
        io.assemble_frames([{"t": 0.0, "detections": []}], lid)


def test_lidar_joins_first_frame_at_or_after():
    recs = [{"t": 0.0, "detections": []}, {"t": 0.1, "detections": []}]
    lid = [{"t": 0.0, "azimuth": 0.0, "depth": 2.0}, {"t": 0.05, "azimuth": 1.0, "depth": 3.0},
           {"t": 0.2, "azimuth": 2.0, "depth": 4.0}]
    frames = io.assemble_frames(recs, lid)
    assert [len(f.lidar_obs) for f in frames] == [1, 1]
    assert frames[1].lidar_obs[0].azimuth == 1.0


def test_bad_detection_field_names_line():
    with pytest.raises(SchemaError, match="detection 0"):
        io.frame_from_record({"t": 0.0, "detections": [{"bearing": [1, 0], "aspect": 1, "box_h": 3,
                                                         "score": 1}]}, "d:4")


def test_tracks_round_trip(tmp_path, short_sim):
    trk = SphericalTracker()
    outs = [o for f in short_sim.frames for o in trk.step(f)]
    io.write_jsonl(tmp_path / "t.jsonl", (io.track_to_record(o) for o in outs))
    back = io.read_tracks(tmp_path / "t.jsonl")
    assert len(back) == len(outs)
    for a, b in zip(back, outs):
        assert (a.t, a.id, a.depth) == (b.t, b.id, b.depth)
        np.testing.assert_array_equal(a.cov_diag, b.cov_diag)
        np.testing.assert_array_equal(a.position, b.position)


def test_gt_round_trip(tmp_path, short_sim):
    io.write_jsonl(tmp_path / "g.jsonl", (io.gt_to_record(r) for r in short_sim.ground_truth))
    back = io.read_gt(tmp_path / "g.jsonl")
    assert [(r.t, r.target_id) for r in back] == [(r.t, r.target_id) for r in short_sim.ground_truth]


def test_tracker_config_overrides():
    cfg = io.tracker_config_from_dict({"assoc": {"confirm_hits": 5}, "noise": {"sigma_px": 3},
                                       "use_joint": False})
    assert cfg.assoc.confirm_hits == 5 and cfg.noise.sigma_px == 3.0 and cfg.use_joint is False
    assert cfg.assoc.chi2_img == TrackerConfig().assoc.chi2_img
    assert io.tracker_config_from_dict(None) == TrackerConfig()


@pytest.mark.parametrize("bad,field", [
    ({"assoc": {"chi2_imgg": 1.0}}, "assoc.chi2_imgg"),
    ({"assoc": {"confirm_hits": 2.5}}, "assoc.confirm_hits"),
    ({"noise": {"sigma_px": "two"}}, "noise.sigma_px"),
    ({"use_joint": 1}, "use_joint"),
    ({"assoc": {"tau_high": 0.05}}, "assoc"),
    ({"process": []}, "process"),
])
def test_tracker_config_errors_name_field(bad, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        io.tracker_config_from_dict(bad)


def test_load_tracker_config_file(tmp_path):
    assert io.load_tracker_config(None) == TrackerConfig()
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        io.load_tracker_config(p)
    with pytest.raises(IoError):
        io.load_tracker_config(tmp_path / "missing.json")


def test_effective_config_resolves_gain():
    d = io.effective_config(TrackerConfig())
    assert d["noise"]["px_per_rad"] == pytest.approx(2000.0 / np.pi)
