"""Shared physical and pipeline constants.

Axis convention everywhere in this package: x = lateral, y = anterior
(direction of travel), z = vertical (up). Forces are newtons, moments
newton-metres, accelerations m/s^2, marker positions metres.
"""

from __future__ import annotations

GRAVITY_MPS2 = 9.81

# Canonical sensor order. Column order of encoded images and the order in
# which tracks are hashed, listed and written.
LOCATIONS = ("Pelvis", "LThigh", "RThigh", "LShank", "RShank")

# Force-plate channel order used in CSV files, targets and reports.
FORCE_CHANNELS = ("fx", "fy", "fz", "mx", "my", "mz")

# Vertical-force contact threshold and hysteresis run length for stance
# detection. Single source of truth; the ingest quality gate reuses these.
DEFAULT_CONTACT_THRESHOLD_N = 20.0
DEFAULT_MIN_CONTACT_FRAMES = 10

# Stance waveforms are time-normalized to this many points (inclusive of
# both endpoints), giving 6 * 101 = 606 target values per trial.
DEFAULT_STANCE_POINTS = 101

# Running requires at least this mean horizontal speed (m/s).
RUN_SPEED_THRESHOLD_MPS = 2.16

# Heading change (degrees) between approach and departure that qualifies a
# trial as a sidestep cut.
SIDESTEP_ANGLE_DEG = 30.0

# Speed-change magnitude (m/s per stance) that flags accelerating or
# decelerating running.
SPEED_SLOPE_THRESHOLD_MPS = 0.5

ENV_DATA_ROOT = "ACCEL2GRF_DATA_ROOT"
