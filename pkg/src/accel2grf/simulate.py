"""Virtual IMUs and the synthetic trial generator.

``double_differentiate`` turns marker position tracks into acceleration
tracks (the virtual-IMU path used to build training data). The generator
produces fully synthetic trials with known ground truth: closed-form force
waveforms with foot strike and toe off at designed frames, plus marker or
accelerometer kinematics whose statistics carry the information the network
needs (impact transients scale with the impact force peak, oscillation
energy with the active peak, heading sweeps with the lateral force lobe).

Everything is deterministic given (seed, trial index); corpus generation is
byte-stable across reruns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import GRAVITY_MPS2, LOCATIONS
from .errors import UpsampleRequested
from .gait import Limb, MovementClass
from .ingest import (
    ForceTrack,
    Location,
    SensorTrack,
    SourceKind,
    SubjectMeta,
    TrackKind,
    TrialRecord,
    write_trial,
)

FORCE_RATE_HZ = 2000.0
MARKER_RATE_HZ = 250.0


@dataclass
class VirtualImuConfig:
    output_hz: float = 250.0
    include_gravity: bool = True
    lowpass_hz: float | None = None  # zero-lag Butterworth cutoff on positions


def _second_derivative(p: np.ndarray, h: float) -> np.ndarray:
    """Second time derivative of (n, c) samples: central differences inside,
    second-order one-sided stencils at the ends (both exact on cubics)."""
    n = len(p)
    if n < 3:
        raise ValueError("need at least 3 samples to differentiate twice")
    a = np.empty_like(p)
    a[1:-1] = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / (h * h)
    if n >= 4:
        a[0] = (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) / (h * h)
        a[-1] = (2.0 * p[-1] - 5.0 * p[-2] + 4.0 * p[-3] - p[-4]) / (h * h)
    else:
        a[0] = a[1]
        a[-1] = a[1]
    return a


def double_differentiate(track: SensorTrack, cfg: VirtualImuConfig | None = None) -> SensorTrack:
    """Marker positions -> accelerations (a virtual IMU).

    Optional zero-lag low-pass on the positions first, then the stencil
    second derivative, then +g on the vertical axis when include_gravity
    (an accelerometer at rest reads +9.81 up), then resampling to
    cfg.output_hz. Raises UpsampleRequested if output_hz exceeds the
    marker rate.
    """
    if cfg is None:
        cfg = VirtualImuConfig()
    if track.kind is not TrackKind.POSITION:
        raise ValueError(f"double_differentiate needs positions, got {track.kind.value}")
    if cfg.output_hz > track.rate_hz:
        raise UpsampleRequested(
            f"output {cfg.output_hz} Hz exceeds marker rate {track.rate_hz} Hz"
        )
    p = track.samples
    if cfg.lowpass_hz is not None:
        from scipy.signal import butter, filtfilt

        if not 0 < cfg.lowpass_hz < track.rate_hz / 2:
            raise ValueError("lowpass_hz must be below the Nyquist rate")
        b, a = butter(2, cfg.lowpass_hz / (track.rate_hz / 2))
        p = filtfilt(b, a, p, axis=0)
    acc = _second_derivative(np.asarray(p, dtype=np.float64), 1.0 / track.rate_hz)
    if cfg.include_gravity:
        acc = acc.copy()
        acc[:, 2] += GRAVITY_MPS2
    out = SensorTrack(track.location, track.rate_hz, acc, TrackKind.ACCELERATION)
    if cfg.output_hz != track.rate_hz:
        from .ingest import resample_uniform

        out = resample_uniform(out, cfg.output_hz)
    return out


def virtual_imu_trial(trial: TrialRecord, cfg: VirtualImuConfig | None = None) -> TrialRecord:
    """Apply double_differentiate to every sensor of a marker trial."""
    from dataclasses import replace

    return replace(trial, sensors=[double_differentiate(t, cfg) for t in trial.sensors])


# --------------------------------------------------------------------------
# Synthetic trials

# Admissible mean-speed band (m/s) per movement template.
_SPEED_BANDS = {
    MovementClass.RUN_SLOW: (2.16, 3.5),
    MovementClass.RUN_MODERATE: (3.5, 5.5),
    MovementClass.RUN_FAST: (5.5, 8.0),
    MovementClass.RUN_ACCEL: (2.16, 8.0),
    MovementClass.RUN_DECEL: (2.16, 8.0),
    MovementClass.SIDESTEP: (2.16, 6.0),
}


@dataclass
class SynthSpec:
    seed: int
    n_trials: int
    movement: MovementClass
    speed_mps: float
    stance_ms: float = 250.0
    noise_std_mps2: float = 0.0
    source_kind: SourceKind = SourceKind.MARKERS
    # location -> 3x3 proper rotation applied to recorded-style outputs
    # (accelerometer trials only).
    mount_rotation: dict[Location, np.ndarray] | None = None

    def __post_init__(self):
        if self.n_trials < 0:
            raise ValueError("n_trials must be >= 0")
        if self.movement is MovementClass.OTHER:
            raise ValueError("cannot synthesize the Other class")
        lo, hi = _SPEED_BANDS[self.movement]
        if not (lo <= self.speed_mps <= hi):
            raise ValueError(
                f"speed {self.speed_mps} outside {self.movement.value} band [{lo}, {hi}]"
            )
        if not 120.0 <= self.stance_ms <= 500.0:
            raise ValueError("stance_ms must be within [120, 500]")
        if self.noise_std_mps2 < 0:
            raise ValueError("noise_std_mps2 must be >= 0")


def _gauss(s: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return np.exp(-0.5 * ((s - mu) / sigma) ** 2)


def _cumtrapz(y: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(y)
    out[0] = 0.0
    np.cumsum((y[1:] + y[:-1]) * (0.5 * dt), out=out[1:])
    return out


@dataclass
class _TrialPlan:
    """Everything one trial needs, drawn in a fixed order from one RNG so
    marker and accelerometer renderings of the same (seed, index) agree."""

    mass: float
    height: float
    stance_s: float
    lead_in: float
    lead_out: float
    f_step: float
    a_impact: float
    a_active: float
    mu1: float
    mu2: float
    fy_amp: float
    fx_amp: float
    mx_amp: float
    my_amp: float
    mz_amp: float
    v_mean: float
    theta_rad: float
    amp_scale: float
    imp_scale: float
    phases: dict
    limb: Limb


_SIG1 = 0.10
_SIG2 = 0.18


def _draw_plan(spec: SynthSpec, index: int) -> _TrialPlan:
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, index)))
    limb = Limb.RIGHT if index % 2 == 0 else Limb.LEFT
    mass = rng.uniform(60.0, 90.0)
    height = rng.uniform(1.60, 1.90)
    stance_s = spec.stance_ms / 1000.0 * rng.uniform(0.92, 1.08)
    lead_in = 0.30 + rng.uniform(0.0, 0.04)
    lead_out = 0.30 + rng.uniform(0.0, 0.04)
    f_step = rng.uniform(2.6, 3.0)
    a_impact = 1.6 * rng.uniform(0.85, 1.15)
    a_active = 2.3 * rng.uniform(0.90, 1.10)
    mu1 = 0.25 * rng.uniform(0.92, 1.05)
    mu2 = 0.55 * rng.uniform(0.95, 1.05)
    fy_amp = 0.25 * rng.uniform(0.90, 1.10)
    sidestep = spec.movement is MovementClass.SIDESTEP
    fx_amp = (0.45 if sidestep else 0.05) * rng.uniform(0.85, 1.15)
    mx_amp = 0.030 * rng.uniform(0.90, 1.10)
    my_amp = 0.020 * rng.uniform(0.90, 1.10)
    mz_amp = 0.012 * rng.uniform(0.90, 1.10)
    lo, hi = _SPEED_BANDS[spec.movement]
    v_mean = float(np.clip(spec.speed_mps + rng.uniform(-0.1, 0.1), lo, hi - 1e-3))
    theta = math.radians(90.0 * rng.uniform(0.9, 1.1)) if sidestep else 0.0
    # Cut away from the stance limb: right stance -> left turn (negative).
    theta_rad = -theta if limb is Limb.RIGHT else theta
    amp_scale = (a_active / 2.3) * rng.uniform(0.95, 1.05)
    imp_scale = (a_impact / 1.6) * rng.uniform(0.95, 1.05)
    phases = {
        loc: rng.uniform(0.0, 2.0 * math.pi, size=3) for loc in LOCATIONS
    }
    return _TrialPlan(
        mass, height, stance_s, lead_in, lead_out, f_step, a_impact, a_active,
        mu1, mu2, fy_amp, fx_amp, mx_amp, my_amp, mz_amp, v_mean, theta_rad,
        amp_scale, imp_scale, phases, limb,
    )


def _force_channels(plan: _TrialPlan, fs: int, to: int, n: int) -> np.ndarray:
    """Closed-form stance kinetics on the force-rate grid, exactly zero
    outside [fs, to). The Gaussian double bump is windowed to the designed
    span, so its tail value (~0.06-0.09 BW, above the 20 N contact
    threshold for all drawn masses) makes the designed FS/TO frames
    coincide with the threshold crossings."""
    bw = plan.mass * GRAVITY_MPS2
    bwh = bw * plan.height
    s_limb = 1.0 if plan.limb is Limb.RIGHT else -1.0
    out = np.zeros((n, 6), dtype=np.float64)
    s = (np.arange(fs, to) - fs) / (to - fs)
    fz = bw * (
        plan.a_impact * _gauss(s, plan.mu1, _SIG1)
        + plan.a_active * _gauss(s, plan.mu2, _SIG2)
    )
    fy = -bw * plan.fy_amp * np.sin(2.0 * math.pi * s)
    fx = -s_limb * bw * plan.fx_amp * np.sin(math.pi * s)
    mx = bwh * plan.mx_amp * np.sin(math.pi * s)
    my = s_limb * bwh * plan.my_amp * np.sin(2.0 * math.pi * s)
    mz = s_limb * bwh * plan.mz_amp * np.sin(3.0 * math.pi * s)
    out[fs:to] = np.column_stack([fx, fy, fz, mx, my, mz])
    return out


# Oscillation acceleration amplitudes (m/s^2) per sensor in the heading
# frame, ordered (lateral, anterior, vertical). Anterior dominates so the
# principal frame is consistent across sensors; vertical is smallest.
_OSC_AMPS = {
    "Pelvis": (3.0, 6.0, 1.5),
    "LThigh": (4.0, 8.0, 1.8),
    "RThigh": (4.0, 8.0, 1.8),
    "LShank": (2.2, 4.5, 1.0),
    "RShank": (2.2, 4.5, 1.0),
}
# Impact transient acceleration amplitudes on the stance-side segments,
# (lateral, anterior, vertical) m/s^2. Sized so the planted shank's stance
# energy exceeds the swing shank's regardless of oscillation phase, even
# against the cross term between a sidestep's turn acceleration and the
# shank oscillation (both of order osc * turn accel, random sign).
_IMPACT_AMPS = {"Shank": (18.0, 36.0, 12.0), "Thigh": (8.0, 16.0, 5.0)}
_IMPACT_FREQ_HZ = 11.0
_IMPACT_TAU_S = 0.08

# Static segment offsets relative to the sacrum path, as fractions of
# height (x sign flips for the left side). Constant offsets differentiate
# away; they only make the written marker files look plausible.
_OFFSETS = {
    "Pelvis": (0.0, 0.0, 0.0),
    "LThigh": (-0.06, 0.0, -0.12),
    "RThigh": (0.06, 0.0, -0.12),
    "LShank": (-0.06, 0.02, -0.30),
    "RShank": (0.06, 0.02, -0.30),
}


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def generate_synthetic_trial(spec: SynthSpec, index: int) -> TrialRecord:
    """Deterministically synthesize one trial.

    Marker-kind specs yield position tracks; accelerometer-kind specs yield
    the double-differentiated (gravity-included) accelerations of the same
    underlying motion, rotated per sensor by spec.mount_rotation and
    perturbed by Gaussian noise of spec.noise_std_mps2. The manifest
    records the designed FS/TO frames, the stance limb and the mean speed
    as oracle ground truth.
    """
    plan = _draw_plan(spec, index)
    fs = int(round(plan.lead_in * FORCE_RATE_HZ))
    to = fs + int(round(plan.stance_s * FORCE_RATE_HZ))
    n_force = to + int(round(plan.lead_out * FORCE_RATE_HZ)) + 1

    force = ForceTrack(FORCE_RATE_HZ, _force_channels(plan, fs, to, n_force))
    markers = _build_markers(spec, plan, fs, to, n_force)

    if spec.source_kind is SourceKind.MARKERS:
        sensors = markers
    else:
        rng_noise = np.random.default_rng(np.random.SeedSequence((spec.seed, index, 1)))
        sensors = []
        for track in markers:
            acc = double_differentiate(track, VirtualImuConfig(output_hz=MARKER_RATE_HZ))
            samples = acc.samples
            if spec.mount_rotation is not None:
                r = np.asarray(spec.mount_rotation[track.location], dtype=np.float64)
                samples = samples @ r.T
            if spec.noise_std_mps2 > 0:
                samples = samples + rng_noise.normal(
                    0.0, spec.noise_std_mps2, size=samples.shape
                )
            sensors.append(
                SensorTrack(track.location, MARKER_RATE_HZ, samples, TrackKind.ACCELERATION)
            )

    trial_id = f"{spec.movement.value.lower()}-{spec.seed}-{index:04d}"
    return TrialRecord(
        trial_id=trial_id,
        subject=SubjectMeta(mass_kg=plan.mass, height_m=plan.height),
        sensors=sensors,
        force=force,
        movement_label=spec.movement.value,
        source_kind=spec.source_kind,
        oracle={
            "fs_frame": fs,
            "to_frame": to,
            "stance_limb": plan.limb.value,
            "speed_mps": plan.v_mean,
        },
    )


def _build_markers(
    spec: SynthSpec, plan: _TrialPlan, fs: int, to: int, n_force: int
) -> list[SensorTrack]:
    t_fs = fs / FORCE_RATE_HZ
    t_to = to / FORCE_RATE_HZ
    duration = (n_force - 1) / FORCE_RATE_HZ
    n_marker = int(math.floor(duration * MARKER_RATE_HZ)) + 1

    fine_rate = 4.0 * MARKER_RATE_HZ
    n_fine = (n_marker - 1) * 4 + 1
    tf = np.arange(n_fine) / fine_rate

    slope = {
        MovementClass.RUN_ACCEL: 1.0 / plan.stance_s,
        MovementClass.RUN_DECEL: -1.0 / plan.stance_s,
    }.get(spec.movement, 0.35 / duration)
    v0 = plan.v_mean - slope * duration / 2.0
    speed = v0 + slope * tf
    heading = plan.theta_rad * _smoothstep((tf - t_fs) / max(t_to - t_fs, 1e-9))
    vx = speed * np.sin(heading)
    vy = speed * np.cos(heading)
    dt = 1.0 / fine_rate
    px = _cumtrapz(vx, dt)[::4]
    py = _cumtrapz(vy, dt)[::4]
    t = tf[::4]

    z0 = 0.55 * plan.height
    two_pi = 2.0 * math.pi
    stance_name = "R" if plan.limb is Limb.RIGHT else "L"

    tracks = []
    for name in LOCATIONS:
        lat_amp, ant_amp, vert_amp = (a * plan.amp_scale for a in _OSC_AMPS[name])
        ph = plan.phases[name].copy()
        if name.startswith("L"):
            ph = ph + math.pi  # limbs half a cycle out of phase
        f_lat = plan.f_step / 2.0
        # Positions carrying the target acceleration amplitudes.
        lat = lat_amp / (two_pi * f_lat) ** 2 * np.sin(two_pi * f_lat * t + ph[0])
        ant = ant_amp / (two_pi * plan.f_step) ** 2 * np.sin(two_pi * plan.f_step * t + ph[1])
        vert = vert_amp / (two_pi * plan.f_step) ** 2 * np.sin(two_pi * plan.f_step * t + ph[2])

        if name[1:] in ("Shank", "Thigh") and name[0] == stance_name:
            seg = "Shank" if name.endswith("Shank") else "Thigh"
            amps = _IMPACT_AMPS[seg]
            rel = t - t_fs
            env = np.where(
                rel >= 0.0,
                np.exp(-rel / _IMPACT_TAU_S) * np.sin(two_pi * _IMPACT_FREQ_HZ * rel),
                0.0,
            )
            k = plan.imp_scale / (two_pi * _IMPACT_FREQ_HZ) ** 2
            lat = lat + amps[0] * k * env
            ant = ant + amps[1] * k * env
            vert = vert + amps[2] * k * env

        # Oscillations and the impact transient ride in a fixed world frame;
        # the heading only steers the path. A turning frame would couple the
        # heading rate into both shanks with random phase, which can exceed
        # the planted-side transient and flip limb detection.
        ox, oy, oz = _OFFSETS[name]
        x = px + lat + ox * plan.height
        y = py + ant + oy * plan.height
        z = z0 + oz * plan.height + vert
        tracks.append(
            SensorTrack(
                Location(name),
                MARKER_RATE_HZ,
                np.column_stack([x, y, z]),
                TrackKind.POSITION,
            )
        )
    return tracks


def generate_corpus(specs: list[SynthSpec], out_dir: str | Path) -> Path:
    """Write all trials of all specs plus a corpus index CSV.

    Layout: ``<out_dir>/trials/<trial_id>/`` per trial and
    ``<out_dir>/corpus.csv`` with columns trial_id, movement, stance_limb,
    speed_mps, path. Rerunning with the same specs writes byte-identical
    files.
    """
    out_dir = Path(out_dir)
    (out_dir / "trials").mkdir(parents=True, exist_ok=True)
    rows = ["trial_id,movement,stance_limb,speed_mps,path"]
    seen_ids: set[str] = set()
    for spec in specs:
        for index in range(spec.n_trials):
            trial = generate_synthetic_trial(spec, index)
            if trial.trial_id in seen_ids:
                raise ValueError(
                    f"duplicate trial id {trial.trial_id}; give each spec a distinct seed"
                )
            seen_ids.add(trial.trial_id)
            rel = f"trials/{trial.trial_id}"
            write_trial(trial, out_dir / rel)
            rows.append(
                ",".join(
                    [
                        trial.trial_id,
                        trial.movement_label,
                        trial.oracle["stance_limb"],
                        repr(float(trial.oracle["speed_mps"])),
                        rel,
                    ]
                )
            )
    (out_dir / "corpus.csv").write_text("\n".join(rows) + "\n")
    return out_dir
