"""Stance events, movement classification and stance-window operations.

Foot strike (FS) is the first frame of the earliest run of vertical force
above the contact threshold that is sustained for at least
min_contact_frames; toe off (TO) is the first frame of the next sustained
sub-threshold run. The hysteresis ignores short blips in either direction.
Window frames are indices at the force rate; operations that consume a
window on a slower track convert through time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .constants import (
    DEFAULT_CONTACT_THRESHOLD_N,
    DEFAULT_MIN_CONTACT_FRAMES,
    DEFAULT_STANCE_POINTS,
    RUN_SPEED_THRESHOLD_MPS,
    SIDESTEP_ANGLE_DEG,
    SPEED_SLOPE_THRESHOLD_MPS,
)
from .errors import MissingSensor, NoContact, NotLeftStance, WindowOutOfBounds
from .ingest import (
    ForceTrack,
    Location,
    SensorTrack,
    SourceKind,
    TrackKind,
    TrialRecord,
)


class Limb(enum.Enum):
    LEFT = "Left"
    RIGHT = "Right"


class MovementClass(enum.Enum):
    RUN_SLOW = "RunSlow"
    RUN_MODERATE = "RunModerate"
    RUN_FAST = "RunFast"
    RUN_ACCEL = "RunAccel"
    RUN_DECEL = "RunDecel"
    SIDESTEP = "Sidestep"
    OTHER = "Other"


@dataclass
class StanceWindow:
    fs_frame: int
    to_frame: int
    rate_hz: float  # rate the frame indices refer to (the force rate)
    stance_limb: Limb | None = None
    normalized_len: int = DEFAULT_STANCE_POINTS

    def __post_init__(self):
        if not (0 <= self.fs_frame < self.to_frame):
            raise ValueError(f"need 0 <= fs < to, got fs={self.fs_frame} to={self.to_frame}")
        if self.normalized_len < 2:
            raise ValueError("normalized_len must be >= 2")

    @property
    def duration_s(self) -> float:
        return (self.to_frame - self.fs_frame) / self.rate_hz


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Start/stop (half-open) index pairs of True runs."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2]))


def detect_stance_events(
    force: ForceTrack,
    threshold_n: float = DEFAULT_CONTACT_THRESHOLD_N,
    min_contact_frames: int = DEFAULT_MIN_CONTACT_FRAMES,
) -> StanceWindow:
    """Find the first stance (FS, TO) in a force track.

    FS is the first frame of the earliest super-threshold run of length >=
    min_contact_frames. TO is the first frame of the subsequent
    sub-threshold run of length >= min_contact_frames (a run that lasts to
    the end of the track qualifies regardless of length). Raises NoContact
    if either event cannot be found.
    """
    fz = force.channels[:, 2]
    above = fz > threshold_n
    fs = None
    for start, stop in _runs(above):
        if stop - start >= min_contact_frames:
            fs = start
            break
    if fs is None:
        raise NoContact(f"no vertical-force run above {threshold_n} N "
                        f"lasting {min_contact_frames} frames")
    below = ~above
    below[:fs] = False
    for start, stop in _runs(below):
        if stop - start >= min_contact_frames or stop == len(fz):
            return StanceWindow(fs_frame=fs, to_frame=start, rate_hz=force.rate_hz)
    raise NoContact("contact never ends (no qualifying toe-off)")


def _window_slice(n_frames: int, rate_hz: float, window: StanceWindow) -> tuple[float, float]:
    """Window endpoints as (possibly fractional) indices on a track at
    rate_hz, validated against the track length."""
    scale = rate_hz / window.rate_hz
    i0 = window.fs_frame * scale
    i1 = window.to_frame * scale
    if i0 < 0 or i1 > (n_frames - 1) + 1e-9:
        raise WindowOutOfBounds(
            f"window [{window.fs_frame}, {window.to_frame}] @ {window.rate_hz} Hz maps to "
            f"[{i0:.2f}, {i1:.2f}] on a {n_frames}-frame track @ {rate_hz} Hz"
        )
    return i0, min(i1, n_frames - 1)


def detect_stance_limb(
    trial: TrialRecord,
    window: StanceWindow,
    record: dict | None = None,
) -> Limb:
    """Stance limb = side whose shank acceleration energy over the stance
    window is larger (the planted leg takes the impact). Ties resolve to
    Right; pass a dict as ``record`` to receive the energies and a
    ``tie`` flag for the experiment log."""
    energies = {}
    for side, location in ((Limb.LEFT, Location.LSHANK), (Limb.RIGHT, Location.RSHANK)):
        try:
            track = trial.sensor(location)
        except Exception as exc:
            raise MissingSensor(str(exc)) from None
        i0, i1 = _window_slice(len(track.samples), track.rate_hz, window)
        seg = track.samples[int(math.floor(i0)): int(math.ceil(i1)) + 1]
        energies[side] = float((seg ** 2).sum())
    tie = energies[Limb.LEFT] == energies[Limb.RIGHT]
    limb = Limb.RIGHT if energies[Limb.RIGHT] >= energies[Limb.LEFT] else Limb.LEFT
    if record is not None:
        record["shank_energy_left"] = energies[Limb.LEFT]
        record["shank_energy_right"] = energies[Limb.RIGHT]
        record["tie"] = tie
    return limb


def _heading_angle(v: np.ndarray) -> float:
    """Heading of a horizontal velocity, radians from +y toward +x
    (positive = toward the right-hand side of travel)."""
    return math.atan2(v[0], v[1])


def classify_movement(
    trial: TrialRecord,
    window: StanceWindow | None = None,
    strict_bins: bool = False,
    run_threshold_mps: float = RUN_SPEED_THRESHOLD_MPS,
    sidestep_angle_deg: float = SIDESTEP_ANGLE_DEG,
    slope_threshold_mps: float = SPEED_SLOPE_THRESHOLD_MPS,
) -> MovementClass:
    """Movement class from the pelvis trajectory.

    Marker trials are classified from the pelvis positions alone: mean
    horizontal speed gates Run vs Other, the heading change between the
    approach (pre-FS) and departure (post-TO) separates sidesteps, and the
    speed slope sets the accelerating/decelerating sub-labels. Crossover
    cuts (heading change toward the stance-limb side, when the window
    carries a limb) are rejected as Other. Accelerometer trials carry no
    positions, so the label recorded in the manifest is returned.

    Speed bins: strict_bins=True uses [2,3) slow, [4,5) moderate, >6 fast
    with everything between mapping to Other; the default widens the bins
    to [2,3.5), [3.5,5.5) and >=5.5 so every running speed gets a label.
    """
    if trial.source_kind is SourceKind.ACCELEROMETERS:
        if trial.movement_label is not None:
            return MovementClass(trial.movement_label)
        raise MissingSensor(
            "accelerometer trial has no movement_label and no position track to classify"
        )

    pelvis = trial.sensor(Location.PELVIS)
    if pelvis.kind is not TrackKind.POSITION:
        raise MissingSensor("classification needs pelvis positions")
    rate = pelvis.rate_hz
    vel = np.gradient(pelvis.samples, 1.0 / rate, axis=0)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    mean_speed = float(speed.mean())
    if mean_speed < run_threshold_mps:
        return MovementClass.OTHER

    if window is None and trial.force is not None:
        try:
            window = detect_stance_events(trial.force)
        except NoContact:
            window = None

    turn_deg = 0.0
    if window is not None:
        fs_t = window.fs_frame / window.rate_hz
        to_t = window.to_frame / window.rate_hz
        span = max(int(round(0.15 * rate)), 2)
        fs_i = int(round(fs_t * rate))
        to_i = int(round(to_t * rate))
        pre = vel[max(fs_i - span, 0): max(fs_i, 1), :2].mean(axis=0)
        post = vel[min(to_i, len(vel) - 1): min(to_i + span, len(vel)), :2].mean(axis=0)
        cross = pre[0] * post[1] - pre[1] * post[0]
        dot = float(pre @ post)
        # Positive = clockwise seen from above = toward the right.
        turn = -math.atan2(cross, dot)
        turn_deg = math.degrees(turn)
        if abs(turn_deg) > sidestep_angle_deg:
            if window.stance_limb is Limb.RIGHT and turn_deg > 0:
                return MovementClass.OTHER  # crossover toward the stance side
            if window.stance_limb is Limb.LEFT and turn_deg < 0:
                return MovementClass.OTHER
            return MovementClass.SIDESTEP

        # Speed slope in m/s per stance duration.
        t = np.arange(len(speed)) / rate
        slope = float(np.polyfit(t, speed, 1)[0])
        dv_per_stance = slope * window.duration_s
        if dv_per_stance > slope_threshold_mps:
            return MovementClass.RUN_ACCEL
        if dv_per_stance < -slope_threshold_mps:
            return MovementClass.RUN_DECEL

    if strict_bins:
        if 2.0 <= mean_speed < 3.0:
            return MovementClass.RUN_SLOW
        if 4.0 <= mean_speed < 5.0:
            return MovementClass.RUN_MODERATE
        if mean_speed > 6.0:
            return MovementClass.RUN_FAST
        return MovementClass.OTHER
    if mean_speed < 3.5:
        return MovementClass.RUN_SLOW
    if mean_speed < 5.5:
        return MovementClass.RUN_MODERATE
    return MovementClass.RUN_FAST


def normalize_stance(
    samples: np.ndarray,
    rate_hz: float,
    window: StanceWindow,
    n_points: int | None = None,
) -> np.ndarray:
    """Resample the stance span of a track to n_points by linear
    interpolation. The first output row is the value at FS, the last the
    value at TO, exactly. Accepts (n,) or (n, c) arrays; window frames are
    converted from the force rate to this track's rate through time."""
    samples = np.asarray(samples, dtype=np.float64)
    squeeze = samples.ndim == 1
    if squeeze:
        samples = samples[:, None]
    if n_points is None:
        n_points = window.normalized_len
    i0, i1 = _window_slice(len(samples), rate_hz, window)
    grid = i0 + (i1 - i0) * np.arange(n_points) / (n_points - 1)
    base = np.arange(len(samples), dtype=np.float64)
    out = np.empty((n_points, samples.shape[1]), dtype=np.float64)
    for j in range(samples.shape[1]):
        out[:, j] = np.interp(grid, base, samples[:, j])
    return out[:, 0] if squeeze else out


def trim_lead_in(
    samples: np.ndarray,
    rate_hz: float,
    window: StanceWindow,
    lead_fraction: float = 0.25,
) -> np.ndarray:
    """Cut a track down to [FS - lead_fraction * stance, TO]. The start
    frame is floored at force rate and clamped at zero; the TO frame is
    retained. Context trimming only; target extraction always uses the
    exact stance window."""
    if lead_fraction < 0:
        raise ValueError("lead_fraction must be >= 0")
    start_force = max(
        int(math.floor(window.fs_frame - lead_fraction * (window.to_frame - window.fs_frame))),
        0,
    )
    scale = rate_hz / window.rate_hz
    start = int(math.floor(start_force * scale))
    stop = int(math.floor(window.to_frame * scale))
    if stop > len(samples) - 1:
        raise WindowOutOfBounds(f"TO frame maps to {stop} on a {len(samples)}-frame track")
    return np.asarray(samples, dtype=np.float64)[start: stop + 1]


_MIRROR_SWAP = {
    Location.LTHIGH: Location.RTHIGH,
    Location.RTHIGH: Location.LTHIGH,
    Location.LSHANK: Location.RSHANK,
    Location.RSHANK: Location.LSHANK,
    Location.PELVIS: Location.PELVIS,
}
_FORCE_MIRROR = np.array([-1.0, 1.0, 1.0, 1.0, -1.0, -1.0])


def mirror_left_to_right(
    trial: TrialRecord, window: StanceWindow
) -> tuple[TrialRecord, StanceWindow]:
    """Reflect a left-stance trial through the sagittal plane so it can pool
    with right-stance data.

    Left and right sensor tracks swap locations, the lateral (x) component
    of every sensor changes sign, and the force channels map as (fx, fy,
    fz, mx, my, mz) -> (-fx, fy, fz, mx, -my, -mz). The window's stance
    limb becomes Right and the trial is flagged mirrored. Applying the
    operation to that flagged trial undoes it bit-exactly (an involution);
    mirroring an unflagged right-stance trial raises NotLeftStance.
    """
    if window.stance_limb is not Limb.LEFT and not trial.mirrored:
        raise NotLeftStance(f"stance limb is {window.stance_limb}, not Left")
    new_sensors = []
    for track in trial.sensors:
        flipped = track.samples.copy()
        if track.kind is not TrackKind.MAGNITUDE:
            flipped[:, 0] = -flipped[:, 0]
        new_sensors.append(
            SensorTrack(_MIRROR_SWAP[track.location], track.rate_hz, flipped, track.kind)
        )
    order = [Location(name) for name in ("Pelvis", "LThigh", "RThigh", "LShank", "RShank")]
    new_sensors.sort(key=lambda t: order.index(t.location))
    new_force = trial.force
    if trial.force is not None:
        new_force = ForceTrack(trial.force.rate_hz, trial.force.channels * _FORCE_MIRROR)
    new_limb = Limb.RIGHT if window.stance_limb is Limb.LEFT else Limb.LEFT
    new_trial = replace(
        trial, sensors=new_sensors, force=new_force, mirrored=not trial.mirrored
    )
    new_window = replace(window, stance_limb=new_limb)
    return new_trial, new_window
