"""Trial parsing, resampling, the quality gate, and deduplication."""

from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from accel2grf.errors import MalformedCsv, MissingFile, UnitError, UpsampleRequested
from accel2grf.ingest import (
    ForceTrack,
    Location,
    RejectReason,
    SensorTrack,
    TrackKind,
    dedupe,
    parse_trial,
    quality_gate,
    resample_uniform,
    trial_content_hash,
    write_trial,
)

from conftest import make_force, make_trial


# --------------------------------------------------------------------------
# parse / write round trip

def _rich_trial(rng):
    samples = {
        name: rng.standard_normal((500, 3)) for name in
        ("Pelvis", "LThigh", "RThigh", "LShank", "RShank")
    }
    trial = make_trial(samples, force=make_force(), trial_id="round-trip")
    trial.oracle = {"fs_frame": 100, "to_frame": 350, "stance_limb": "Right"}
    return trial


def test_round_trip_bit_exact(tmp_path, rng):
    trial = _rich_trial(rng)
    write_trial(trial, tmp_path / "t")
    back = parse_trial(tmp_path / "t")
    assert back.trial_id == trial.trial_id
    assert back.subject == trial.subject
    assert back.oracle == trial.oracle
    assert back.source_kind == trial.source_kind
    for a, b in zip(trial.sensors, back.sensors):
        assert a.location == b.location and a.rate_hz == b.rate_hz
        assert a.samples.tobytes() == b.samples.tobytes()
    assert trial.force.channels.tobytes() == back.force.channels.tobytes()


def test_parse_incomplete_topology(tmp_path, rng):
    trial = _rich_trial(rng)
    write_trial(trial, tmp_path / "t")
    manifest = json.loads((tmp_path / "t" / "trial.json").read_text())
    manifest["sensors"] = manifest["sensors"][:4]
    (tmp_path / "t" / "trial.json").write_text(json.dumps(manifest))
    with pytest.raises(MissingFile, match="missing"):
        parse_trial(tmp_path / "t")


def test_parse_nan_cell_rejected(tmp_path, rng):
    trial = _rich_trial(rng)
    write_trial(trial, tmp_path / "t")
    path = tmp_path / "t" / "pelvis.csv"
    lines = path.read_text().split("\n")
    parts = lines[3].split(",")
    parts[2] = "NaN"
    lines[3] = ",".join(parts)
    path.write_text("\n".join(lines))
    with pytest.raises(MalformedCsv) as err:
        parse_trial(tmp_path / "t")
    # Diagnostic names the file and the line.
    assert "pelvis.csv:4" in str(err.value)


def test_parse_unknown_units(tmp_path, rng):
    trial = _rich_trial(rng)
    write_trial(trial, tmp_path / "t")
    manifest = json.loads((tmp_path / "t" / "trial.json").read_text())
    manifest["sensors"][0]["units"] = "furlongs"
    (tmp_path / "t" / "trial.json").write_text(json.dumps(manifest))
    with pytest.raises(UnitError):
        parse_trial(tmp_path / "t")


def test_parse_millimetre_positions_scaled(tmp_path):
    samples = {"Pelvis": np.full((500, 3), 1234.0)}
    trial = make_trial(samples, kind=TrackKind.POSITION)
    write_trial(trial, tmp_path / "t")
    manifest = json.loads((tmp_path / "t" / "trial.json").read_text())
    for entry in manifest["sensors"]:
        if entry["location"] == "Pelvis":
            entry["units"] = "mm"
    (tmp_path / "t" / "trial.json").write_text(json.dumps(manifest))
    back = parse_trial(tmp_path / "t")
    assert np.allclose(back.sensor(Location.PELVIS).samples, 1.234, atol=1e-12)


# --------------------------------------------------------------------------
# resample_uniform

def test_resample_integer_decimation_exact(rng):
    samples = rng.standard_normal((1001, 3))
    track = SensorTrack(Location.PELVIS, 1000.0, samples)
    out = resample_uniform(track, 250.0)
    assert out.rate_hz == 250.0
    assert len(out.samples) == 251
    assert np.array_equal(out.samples, samples[::4])


def test_resample_linear_ramp_exact():
    t = np.arange(1001) / 1000.0
    track = SensorTrack(Location.PELVIS, 1000.0, np.column_stack([t, 2 * t, -t]))
    out = resample_uniform(track, 333.0)
    t_new = np.arange(len(out.samples)) / 333.0
    expect = np.column_stack([t_new, 2 * t_new, -t_new])
    assert np.max(np.abs(out.samples - expect)) <= 1e-12


def test_resample_sine_within_interpolation_bound():
    rate, target, freq = 1000.0, 250.0, 2.0
    t = np.arange(2001) / rate
    x = np.sin(2 * np.pi * freq * t)
    track = SensorTrack(Location.PELVIS, rate, np.column_stack([x, x, x]))
    out = resample_uniform(track, target)
    t_new = np.arange(len(out.samples)) / target
    analytic = np.sin(2 * np.pi * freq * t_new)
    # Linear interpolation error bound (h^2 / 8) * max|x''| on the source grid.
    bound = (1.0 / rate) ** 2 / 8.0 * (2 * np.pi * freq) ** 2
    assert np.max(np.abs(out.samples[:, 0] - analytic)) <= bound


def test_resample_native_rate_identity(rng):
    samples = rng.standard_normal((400, 3))
    track = SensorTrack(Location.PELVIS, 250.0, samples)
    out = resample_uniform(track, 250.0)
    assert np.max(np.abs(out.samples - samples)) <= 1e-12


def test_resample_upsample_rejected():
    track = SensorTrack(Location.PELVIS, 100.0, np.zeros((10, 3)))
    with pytest.raises(UpsampleRequested):
        resample_uniform(track, 200.0)


def test_resample_force_track(rng):
    channels = rng.standard_normal((1001, 6))
    out = resample_uniform(ForceTrack(1000.0, channels), 250.0)
    assert isinstance(out, ForceTrack)
    assert np.array_equal(out.channels, channels[::4])


# --------------------------------------------------------------------------
# quality_gate

def test_gate_fills_short_gap(rng):
    samples = {"Pelvis": rng.standard_normal((500, 3))}
    trial = make_trial(samples, force=make_force())
    original = trial.sensor(Location.PELVIS).samples.copy()
    gapped = original.copy()
    gapped[200:203] = np.nan
    trial.sensors[0] = replace(trial.sensors[0], samples=gapped)

    out = quality_gate(trial, max_gap_frames=10)
    assert not isinstance(out, RejectReason)
    filled = out.sensor(Location.PELVIS).samples
    assert np.isfinite(filled).all()
    # Everything outside the gap is untouched.
    mask = np.ones(500, dtype=bool)
    mask[200:203] = False
    assert np.array_equal(filled[mask], original[mask])


def test_gate_rejects_long_gap(rng):
    samples = rng.standard_normal((500, 3))
    samples[100:150] = np.nan
    trial = make_trial({"Pelvis": samples}, force=make_force())
    out = quality_gate(trial, max_gap_frames=10)
    assert isinstance(out, RejectReason)
    assert out.code == "gap_too_long"


def test_gate_rejects_no_contact():
    trial = make_trial(force=make_force(level=5.0))
    out = quality_gate(trial, max_gap_frames=10)
    assert isinstance(out, RejectReason)
    assert out.code == "no_contact"


def test_gate_rejects_short_duration():
    trial = make_trial(n=5, force=make_force())
    out = quality_gate(trial, max_gap_frames=10)
    assert isinstance(out, RejectReason)
    assert out.code == "duration_too_short"


# --------------------------------------------------------------------------
# dedupe

def test_dedupe_drops_exact_copy(rng):
    a = make_trial({"Pelvis": rng.standard_normal((500, 3))}, trial_id="a")
    b = make_trial({"Pelvis": rng.standard_normal((500, 3))}, trial_id="b")
    copy_a = replace(a, trial_id="a-copy")
    out = dedupe([a, copy_a, b])
    assert [t.trial_id for t in out] == ["a", "b"]


def test_dedupe_distinct_identity(rng):
    a = make_trial({"Pelvis": rng.standard_normal((500, 3))}, trial_id="a")
    b = make_trial({"Pelvis": rng.standard_normal((500, 3))}, trial_id="b")
    assert dedupe([a, b]) == [a, b]


def test_dedupe_keeps_tiny_perturbation(rng):
    samples = rng.standard_normal((500, 3))
    a = make_trial({"Pelvis": samples}, trial_id="a")
    perturbed = samples.copy()
    perturbed[0, 0] += 1e-9
    b = make_trial({"Pelvis": perturbed}, trial_id="b")
    assert len(dedupe([a, b])) == 2
    assert trial_content_hash(a) != trial_content_hash(b)


def test_dedupe_idempotent(rng):
    trials = [
        make_trial({"Pelvis": rng.standard_normal((500, 3))}, trial_id=f"t{i}")
        for i in range(3)
    ]
    trials.append(replace(trials[0], trial_id="t0-copy"))
    once = dedupe(trials)
    assert dedupe(once) == once
