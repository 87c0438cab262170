"""Shared builders for the test suite.

Most tests construct trials in memory instead of reading disk fixtures;
these helpers keep the five-sensor topology and the window conventions in
one place.
"""

from __future__ import annotations

import numpy as np
import pytest

from accel2grf.gait import StanceWindow
from accel2grf.ingest import (
    ForceTrack,
    Location,
    SensorTrack,
    SourceKind,
    SubjectMeta,
    TrackKind,
    TrialRecord,
)

LOCATION_NAMES = ("Pelvis", "LThigh", "RThigh", "LShank", "RShank")


def make_force(
    n: int = 500,
    fs: int = 100,
    to: int = 350,
    level: float = 800.0,
    rate_hz: float = 2000.0,
) -> ForceTrack:
    """Rectangular vertical-force track: level N on [fs, to), zero outside."""
    channels = np.zeros((n, 6), dtype=np.float64)
    channels[fs:to, 2] = level
    return ForceTrack(rate_hz=rate_hz, channels=channels)


def make_trial(
    samples_by_location: dict | None = None,
    n: int = 500,
    rate_hz: float = 2000.0,
    kind: TrackKind = TrackKind.ACCELERATION,
    force: ForceTrack | None = None,
    trial_id: str = "t0",
    mass_kg: float = 70.0,
    height_m: float = 1.75,
    source_kind: SourceKind = SourceKind.MARKERS,
    movement_label: str | None = None,
) -> TrialRecord:
    """Five-sensor trial; unspecified sensors get zero samples."""
    sensors = []
    for name in LOCATION_NAMES:
        if samples_by_location and name in samples_by_location:
            samples = np.asarray(samples_by_location[name], dtype=np.float64)
        else:
            samples = np.zeros((n, 3), dtype=np.float64)
        sensors.append(SensorTrack(Location(name), rate_hz, samples, kind))
    return TrialRecord(
        trial_id=trial_id,
        subject=SubjectMeta(mass_kg=mass_kg, height_m=height_m),
        sensors=sensors,
        force=force,
        movement_label=movement_label,
        source_kind=source_kind,
    )


def make_window(fs: int = 100, to: int = 350, rate_hz: float = 2000.0,
                limb=None) -> StanceWindow:
    return StanceWindow(fs_frame=fs, to_frame=to, rate_hz=rate_hz, stance_limb=limb)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish proper rotation from a QR factorization."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
