"""Orientation alignment of sensor tracks.

Two representations remove the dependence on sensor mounting:

* Euclidean-norm alignment collapses each frame to its magnitude, which is
  rotation invariant by construction (one gray channel).
* Principal-axis alignment rotates each track into a data-driven frame:
  the direction of greatest variance becomes the anterior (y) axis, the
  second the lateral (x) axis and the third the vertical (z) axis.

Sign conventions make the principal frame deterministic: the anterior axis
is oriented so the net velocity change (first integral of the rotated
anterior acceleration) is non-negative, the vertical axis so the mean
rotated vertical component is non-negative (an accelerometer at rest
measures +g up), and the lateral axis completes a right-handed frame, which
also enforces det(R) = +1.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import replace

import numpy as np

from .errors import DegenerateVariance
from .ingest import SensorTrack, SourceKind, TrackKind, TrialRecord, Location


class AlignmentMode(enum.Enum):
    NORM = "norm"
    PCA = "pca"


VARIANCE_FLOOR = 1e-12


def euclidean_norm_align(track: SensorTrack) -> SensorTrack:
    """Replace each frame by its Euclidean magnitude, broadcast to all three
    columns, and mark the track magnitude-kind. Idempotent: magnitude-kind
    tracks are returned unchanged."""
    if track.kind is TrackKind.MAGNITUDE:
        return track
    mags = np.linalg.norm(track.samples, axis=1)
    return SensorTrack(
        track.location,
        track.rate_hz,
        np.repeat(mags[:, None], 3, axis=1),
        TrackKind.MAGNITUDE,
    )


def pca_rotation_matrix(track: SensorTrack) -> np.ndarray:
    """Rotation taking sensor-frame samples into the principal frame.

    Parameters
    ----------
    track : SensorTrack
        Acceleration samples (n, 3). The covariance is taken over all
        frames after mean centering.

    Returns
    -------
    R : ndarray (3, 3)
        Proper rotation (orthonormal, det = +1). Row order is (lateral,
        anterior, vertical), so aligned samples are ``samples @ R.T``.

    Raises
    ------
    DegenerateVariance
        If the total variance is below 1e-12 (no orientation information).
    """
    samples = np.asarray(track.samples, dtype=np.float64)
    centered = samples - samples.mean(axis=0)
    total_var = float((centered ** 2).sum()) / max(len(samples) - 1, 1)
    if total_var < VARIANCE_FLOOR:
        raise DegenerateVariance(f"total variance {total_var:.3e} below {VARIANCE_FLOOR}")
    # Right singular vectors of the centered data = principal directions,
    # ordered by decreasing variance.
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    anterior = vt[0]
    vertical = vt[2]
    # Orient anterior: non-negative net velocity change of the projected raw
    # signal (the subject moves forward, not backward).
    net_forward = float(samples.sum(axis=0) @ anterior)
    if net_forward < 0.0:
        anterior = -anterior
    # Orient vertical: gravity shows up as a positive mean on the vertical
    # component of an accelerometer signal.
    if float(samples.mean(axis=0) @ vertical) < 0.0:
        vertical = -vertical
    # Lateral completes the right-handed frame; this is the det = +1 flip of
    # the remaining axis, made deterministic.
    lateral = np.cross(anterior, vertical)
    r = np.vstack([lateral, anterior, vertical])
    if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
        raise DegenerateVariance("principal directions not orthonormal")
    return r


def align_track(track: SensorTrack, r: np.ndarray) -> SensorTrack:
    return SensorTrack(track.location, track.rate_hz, track.samples @ r.T, track.kind)


def align_trial(trial: TrialRecord, mode: AlignmentMode) -> TrialRecord:
    """Align every sensor track of a trial.

    NORM mode applies Euclidean-norm alignment per sensor. PCA mode applies
    one rotation computed from the pelvis track to all five sensors for
    marker-derived trials (rigid capture volume, shared frame), and a
    per-sensor rotation for recorded accelerometer trials (independent,
    unknown mountings). A degenerate track falls back to the identity
    rotation with a warning instead of failing the trial. Applied rotations
    are recorded on the returned trial for the experiment log.
    """
    if mode is AlignmentMode.NORM:
        new_sensors = [euclidean_norm_align(t) for t in trial.sensors]
        rotations = {t.location.value: np.eye(3).tolist() for t in trial.sensors}
        return replace(trial, sensors=new_sensors, applied_rotations=rotations)

    def safe_rotation(track: SensorTrack) -> np.ndarray:
        try:
            return pca_rotation_matrix(track)
        except DegenerateVariance as exc:
            warnings.warn(
                f"trial {trial.trial_id}: {track.location.value}: {exc}; using identity",
                stacklevel=2,
            )
            return np.eye(3)

    if trial.source_kind is SourceKind.MARKERS:
        r = safe_rotation(trial.sensor(Location.PELVIS))
        per_sensor = {t.location: r for t in trial.sensors}
    else:
        per_sensor = {t.location: safe_rotation(t) for t in trial.sensors}

    new_sensors = [align_track(t, per_sensor[t.location]) for t in trial.sensors]
    rotations = {loc.value: r.tolist() for loc, r in per_sensor.items()}
    return replace(trial, sensors=new_sensors, applied_rotations=rotations)
