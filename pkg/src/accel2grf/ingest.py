"""Trial records and the on-disk trial directory format.

A trial lives in its own directory: a ``trial.json`` manifest plus one CSV
per track. Sensor CSVs have header ``t,x,y,z``; the force CSV has header
``t,fx,fy,fz,mx,my,mz``. An empty cell marks a missing sample (a gap, to be
filled or rejected by the quality gate); a literal ``nan`` or ``inf`` is a
malformed file. Floats are written with ``repr`` so a write/parse round trip
is bit-exact.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .constants import (
    DEFAULT_CONTACT_THRESHOLD_N,
    FORCE_CHANNELS,
    LOCATIONS,
)
from .errors import (
    MalformedCsv,
    MissingFile,
    UnitError,
    UnknownSensorName,
    UpsampleRequested,
)


class Location(enum.Enum):
    PELVIS = "Pelvis"
    LTHIGH = "LThigh"
    RTHIGH = "RThigh"
    LSHANK = "LShank"
    RSHANK = "RShank"


LOCATION_ORDER = tuple(Location(name) for name in LOCATIONS)


class TrackKind(enum.Enum):
    POSITION = "position"
    ACCELERATION = "acceleration"
    # Euclidean-norm aligned: the per-frame magnitude, stored broadcast to
    # all three columns. Re-alignment is a no-op on these.
    MAGNITUDE = "magnitude"


class SourceKind(enum.Enum):
    MARKERS = "markers"
    ACCELEROMETERS = "accelerometers"


# Accepted unit strings and their SI conversion factors, per track kind.
_POSITION_UNITS = {"m": 1.0, "mm": 1e-3, "cm": 1e-2}
_ACCEL_UNITS = {"m/s2": 1.0, "g": 9.81}
_FORCE_UNITS = {"N": 1.0, "kN": 1e3}


@dataclass
class SubjectMeta:
    mass_kg: float
    height_m: float
    sex: str | None = None


@dataclass
class SensorTrack:
    location: Location
    rate_hz: float
    samples: np.ndarray  # (n, 3) float64, axis order (lateral, anterior, vertical)
    kind: TrackKind = TrackKind.ACCELERATION

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != 3:
            raise ValueError(f"sensor samples must be (n, 3), got {self.samples.shape}")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")


@dataclass
class ForceTrack:
    rate_hz: float
    channels: np.ndarray  # (n, 6) float64: fx, fy, fz, mx, my, mz

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 2 or self.channels.shape[1] != 6:
            raise ValueError(f"force channels must be (n, 6), got {self.channels.shape}")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")


@dataclass
class TrialRecord:
    trial_id: str
    subject: SubjectMeta
    sensors: list[SensorTrack]
    force: ForceTrack | None = None
    movement_label: str | None = None
    source_kind: SourceKind = SourceKind.MARKERS
    mirrored: bool = False
    # Generator ground truth (fs_frame/to_frame at force rate, stance_limb,
    # speed_mps). None for externally captured data.
    oracle: dict | None = None
    # Rotation log filled by align_trial: location name -> 3x3 list/array.
    applied_rotations: dict | None = None

    def sensor(self, location: Location) -> SensorTrack:
        for track in self.sensors:
            if track.location is location:
                return track
        raise MissingFile(f"trial {self.trial_id} has no {location.value} track")

    def has_complete_topology(self) -> bool:
        have = {t.location for t in self.sensors}
        return have == set(LOCATION_ORDER)


@dataclass
class RejectReason:
    code: str  # gap_too_long | no_contact | duration_too_short
    detail: str


# --------------------------------------------------------------------------
# CSV helpers

def _parse_csv(path: Path, columns: tuple[str, ...]) -> np.ndarray:
    """Parse one track CSV. Empty cells become NaN (gap); literal nan/inf
    raise MalformedCsv. Returns (n, len(columns)) float64 including t."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise MissingFile(f"cannot read {path}: {exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedCsv(path, 1, "empty file")
    header = lines[0].strip()
    expected = ",".join(columns)
    if header != expected:
        raise MalformedCsv(path, 1, f"expected header {expected!r}, got {header!r}")
    n_cols = len(columns)
    out = np.empty((len(lines) - 1, n_cols), dtype=np.float64)
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != n_cols:
            raise MalformedCsv(path, i, f"expected {n_cols} columns, got {len(parts)}")
        for j, part in enumerate(parts):
            part = part.strip()
            if part == "":
                if j == 0:
                    raise MalformedCsv(path, i, "missing time value")
                out[i - 2, j] = np.nan
                continue
            try:
                value = float(part)
            except ValueError:
                raise MalformedCsv(path, i, f"bad float {part!r}") from None
            if not math.isfinite(value):
                raise MalformedCsv(path, i, f"non-finite value {part!r}")
            out[i - 2, j] = value
    return out


def _format_csv(columns: tuple[str, ...], t: np.ndarray, values: np.ndarray) -> str:
    rows = [",".join(columns)]
    for ti, row in zip(t, values):
        cells = [repr(float(ti))]
        for v in row:
            cells.append("" if math.isnan(v) else repr(float(v)))
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def _check_time_column(path: Path, t: np.ndarray, rate_hz: float):
    expected = np.arange(len(t)) / rate_hz
    if len(t) and np.nanmax(np.abs(t - expected)) > 1e-6:
        raise MalformedCsv(path, 2, f"time column inconsistent with rate {rate_hz} Hz")


# --------------------------------------------------------------------------
# Trial directory I/O

def parse_trial(dir_path: str | Path) -> TrialRecord:
    """Read one trial directory into a TrialRecord.

    Requires the full five-sensor topology (Pelvis, both thighs, both
    shanks). Units are converted to SI on the way in; unknown unit strings
    raise UnitError, unknown sensor locations raise UnknownSensorName.
    """
    dir_path = Path(dir_path)
    manifest_path = dir_path / "trial.json"
    if not manifest_path.is_file():
        raise MissingFile(f"no trial.json in {dir_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)

    subject = SubjectMeta(
        mass_kg=float(manifest["subject"]["mass_kg"]),
        height_m=float(manifest["subject"]["height_m"]),
        sex=manifest["subject"].get("sex"),
    )

    sensors = []
    seen = set()
    for entry in manifest.get("sensors", []):
        name = entry["location"]
        try:
            location = Location(name)
        except ValueError:
            raise UnknownSensorName(f"{manifest_path}: unknown sensor location {name!r}") from None
        if location in seen:
            raise UnknownSensorName(f"{manifest_path}: duplicate sensor {name!r}")
        seen.add(location)
        kind = TrackKind(entry.get("kind", "acceleration"))
        units = entry.get("units")
        if kind is TrackKind.POSITION:
            table, default = _POSITION_UNITS, "m"
        else:
            table, default = _ACCEL_UNITS, "m/s2"
        scale = table.get(units or default)
        if scale is None:
            raise UnitError(f"{manifest_path}: unknown units {units!r} for {name}")
        rate_hz = float(entry["rate_hz"])
        data = _parse_csv(dir_path / entry["file"], ("t", "x", "y", "z"))
        _check_time_column(dir_path / entry["file"], data[:, 0], rate_hz)
        sensors.append(SensorTrack(location, rate_hz, data[:, 1:] * scale, kind))

    missing = [loc.value for loc in LOCATION_ORDER if loc not in seen]
    if missing:
        raise MissingFile(f"{manifest_path}: incomplete sensor topology, missing {missing}")
    sensors.sort(key=lambda t: LOCATION_ORDER.index(t.location))

    force = None
    if manifest.get("force"):
        entry = manifest["force"]
        units = entry.get("units")
        scale = _FORCE_UNITS.get(units or "N")
        if scale is None:
            raise UnitError(f"{manifest_path}: unknown force units {units!r}")
        rate_hz = float(entry["rate_hz"])
        data = _parse_csv(dir_path / entry["file"], ("t",) + FORCE_CHANNELS)
        _check_time_column(dir_path / entry["file"], data[:, 0], rate_hz)
        force = ForceTrack(rate_hz, data[:, 1:] * scale)

    if "source_kind" in manifest:
        source_kind = SourceKind(manifest["source_kind"])
    elif all(t.kind is TrackKind.POSITION for t in sensors):
        source_kind = SourceKind.MARKERS
    else:
        source_kind = SourceKind.ACCELEROMETERS

    return TrialRecord(
        trial_id=str(manifest["trial_id"]),
        subject=subject,
        sensors=sensors,
        force=force,
        movement_label=manifest.get("movement_label"),
        source_kind=source_kind,
        mirrored=bool(manifest.get("mirrored", False)),
        oracle=manifest.get("oracle"),
    )


def write_trial(trial: TrialRecord, dir_path: str | Path) -> Path:
    """Write a trial directory (manifest + CSVs). Inverse of parse_trial;
    the round trip reproduces every sample bit-for-bit."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)

    sensor_entries = []
    for track in trial.sensors:
        fname = f"{track.location.value.lower()}.csv"
        t = np.arange(len(track.samples)) / track.rate_hz
        (dir_path / fname).write_text(
            _format_csv(("t", "x", "y", "z"), t, track.samples)
        )
        sensor_entries.append(
            {
                "location": track.location.value,
                "file": fname,
                "rate_hz": track.rate_hz,
                "kind": track.kind.value,
            }
        )

    manifest = {
        "trial_id": trial.trial_id,
        "subject": {
            "mass_kg": trial.subject.mass_kg,
            "height_m": trial.subject.height_m,
            "sex": trial.subject.sex,
        },
        "sensors": sensor_entries,
        "force": None,
        "movement_label": trial.movement_label,
        "source_kind": trial.source_kind.value,
        "mirrored": trial.mirrored,
        "oracle": trial.oracle,
    }
    if trial.force is not None:
        t = np.arange(len(trial.force.channels)) / trial.force.rate_hz
        (dir_path / "force.csv").write_text(
            _format_csv(("t",) + FORCE_CHANNELS, t, trial.force.channels)
        )
        manifest["force"] = {"file": "force.csv", "rate_hz": trial.force.rate_hz, "units": "N"}

    with open(dir_path / "trial.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return dir_path


# --------------------------------------------------------------------------
# Resampling

def _resample_array(samples: np.ndarray, rate_hz: float, target_hz: float) -> np.ndarray:
    n = len(samples)
    duration = (n - 1) / rate_hz
    n_new = int(math.floor(duration * target_hz)) + 1
    t_old = np.arange(n) / rate_hz
    t_new = np.arange(n_new) / target_hz
    out = np.empty((n_new, samples.shape[1]), dtype=np.float64)
    for j in range(samples.shape[1]):
        out[:, j] = np.interp(t_new, t_old, samples[:, j])
    return out


def resample_uniform(track, target_hz: float):
    """Linearly resample a SensorTrack or ForceTrack onto a uniform grid at
    target_hz spanning the original time extent. The first sample is
    preserved exactly; resampling at the native rate is the identity.
    Upsampling raises UpsampleRequested (no fabricated bandwidth)."""
    if target_hz > track.rate_hz:
        raise UpsampleRequested(
            f"target {target_hz} Hz exceeds track rate {track.rate_hz} Hz"
        )
    if isinstance(track, ForceTrack):
        if len(track.channels) < 2:
            raise ValueError("need at least 2 samples to resample")
        return ForceTrack(target_hz, _resample_array(track.channels, track.rate_hz, target_hz))
    if len(track.samples) < 2:
        raise ValueError("need at least 2 samples to resample")
    return SensorTrack(
        track.location, target_hz, _resample_array(track.samples, track.rate_hz, target_hz), track.kind
    )


# --------------------------------------------------------------------------
# Quality gate

def _fill_gaps(samples: np.ndarray, max_gap_frames: int) -> np.ndarray | str:
    """Cubic-spline fill of NaN runs up to max_gap_frames. Returns the filled
    copy, or a reject detail string when a gap is too long. Samples outside
    gap regions are left untouched."""
    from scipy.interpolate import CubicSpline

    missing = np.isnan(samples).any(axis=1)
    if not missing.any():
        return samples
    idx = np.flatnonzero(missing)
    # Split into consecutive runs and measure the longest.
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    longest = max(len(r) for r in runs)
    if longest > max_gap_frames:
        return f"gap of {longest} frames exceeds {max_gap_frames}"
    valid = np.flatnonzero(~missing)
    if len(valid) < 2:
        return "fewer than 2 valid frames"
    out = samples.copy()
    if len(valid) >= 4:
        spline = CubicSpline(valid, samples[valid])
        out[missing] = spline(idx)
    else:
        for j in range(samples.shape[1]):
            out[missing, j] = np.interp(idx, valid, samples[valid, j])
    return out


def quality_gate(
    trial: TrialRecord,
    max_gap_frames: int = 10,
    min_frames: int = 10,
    contact_threshold_n: float = DEFAULT_CONTACT_THRESHOLD_N,
) -> TrialRecord | RejectReason:
    """Accept a trial (returning a cleaned copy) or return a RejectReason.

    Rejection codes: gap_too_long (a NaN run longer than max_gap_frames in
    any track), duration_too_short (any track shorter than min_frames), and
    no_contact (the vertical force never exceeds the contact threshold).
    Accepted samples outside filled gap regions are never altered.
    """
    for track in trial.sensors:
        if len(track.samples) < min_frames:
            return RejectReason(
                "duration_too_short",
                f"{track.location.value} has {len(track.samples)} frames (< {min_frames})",
            )
    if trial.force is not None and len(trial.force.channels) < min_frames:
        return RejectReason(
            "duration_too_short", f"force has {len(trial.force.channels)} frames"
        )

    new_sensors = []
    for track in trial.sensors:
        filled = _fill_gaps(track.samples, max_gap_frames)
        if isinstance(filled, str):
            return RejectReason("gap_too_long", f"{track.location.value}: {filled}")
        new_sensors.append(SensorTrack(track.location, track.rate_hz, filled, track.kind))

    new_force = trial.force
    if trial.force is not None:
        filled = _fill_gaps(trial.force.channels, max_gap_frames)
        if isinstance(filled, str):
            return RejectReason("gap_too_long", f"force: {filled}")
        new_force = ForceTrack(trial.force.rate_hz, filled)
        if not (new_force.channels[:, 2] > contact_threshold_n).any():
            return RejectReason(
                "no_contact",
                f"vertical force never exceeds {contact_threshold_n} N",
            )

    return replace(trial, sensors=new_sensors, force=new_force)


# --------------------------------------------------------------------------
# Deduplication

def trial_content_hash(trial: TrialRecord) -> str:
    """sha256 over the trial's sample bytes in canonical sensor order."""
    h = hashlib.sha256()
    for track in sorted(trial.sensors, key=lambda t: LOCATION_ORDER.index(t.location)):
        h.update(track.location.value.encode())
        h.update(np.ascontiguousarray(track.samples, dtype="<f8").tobytes())
    if trial.force is not None:
        h.update(b"force")
        h.update(np.ascontiguousarray(trial.force.channels, dtype="<f8").tobytes())
    return h.hexdigest()


def dedupe(trials: list[TrialRecord]) -> list[TrialRecord]:
    """Drop exact-content duplicates, keeping first occurrences in order.
    Near-duplicates (any bit of sample data differing) are kept."""
    seen: set[str] = set()
    out = []
    for trial in trials:
        key = trial_content_hash(trial)
        if key in seen:
            continue
        seen.add(key)
        out.append(trial)
    return out
