"""Image encoding of aligned trials and target-side dimensionality reduction.

A trial becomes a 5-column grid (sensor order Pelvis, LThigh, RThigh,
LShank, RShank) of stance-normalized frames, one row per normalized time
point with row 0 holding the LAST stance frame (time runs upward, matching
how the downstream convolution stacks see "recent" rows first; a flag flips
it for ablations). Axis components map to color channels (R = lateral x,
G = anterior y, B = vertical z); Euclidean-norm aligned trials have equal
channels and hence come out gray. Bytes come from per-image per-channel
min-max scaling by default, or from a fixed symmetric range when amplitude
must survive scaling. The grid is then resized bilinearly to the network's
square input.

Targets are the six stance-normalized kinetics channels in body-weight
units, interlaced frame-major into one vector (6 x 101 = 606 by default),
then reduced by a PCA fitted on training targets only.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import DEFAULT_STANCE_POINTS, GRAVITY_MPS2, LOCATIONS
from .errors import (
    DimensionMismatch,
    EmptyWindow,
    MissingSensor,
    TooFewSamples,
)
from .gait import StanceWindow, normalize_stance
from .ingest import ForceTrack, Location, SubjectMeta, TrackKind, TrialRecord


@dataclass
class EncodedSample:
    trial_id: str
    image: np.ndarray  # (size, size, 3) uint8
    target: np.ndarray | None  # (6 * n_points,) float64, body-weight units
    scaling: dict  # byte-mapping record, see encode_grid
    movement: str | None = None
    stance_limb: str | None = None
    mirrored: bool = False
    mass_kg: float | None = None
    height_m: float | None = None


def encode_grid(
    trial: TrialRecord,
    window: StanceWindow,
    n_points: int | None = None,
    fixed_range_mps2: float | None = None,
    time_up: bool = True,
) -> tuple[np.ndarray, dict]:
    """Build the pre-resize byte grid (n_points, 5, 3) plus its scaling
    record.

    Per-image mode scales each color channel over the whole grid with
    round(255 * (v - min) / (max - min)); a degenerate channel (max ==
    min) maps to 0. Fixed-range mode uses [-range, +range] (or [0, range]
    for magnitude grids) and clips. The scaling record holds per-channel
    (min, max) so decode_image_grid can invert the mapping to within half
    a quantization step.
    """
    if not trial.has_complete_topology():
        raise MissingSensor(f"trial {trial.trial_id} lacks the five-sensor topology")
    if window.to_frame <= window.fs_frame:
        raise EmptyWindow("stance window has no frames")
    if n_points is None:
        n_points = window.normalized_len

    columns = []
    magnitude = False
    for name in LOCATIONS:
        track = trial.sensor(Location(name))
        magnitude = magnitude or track.kind is TrackKind.MAGNITUDE
        columns.append(normalize_stance(track.samples, track.rate_hz, window, n_points))
    grid = np.stack(columns, axis=1)  # (n_points, 5, 3)
    if time_up:
        grid = grid[::-1]

    scaling = {"mode": "per_image", "time_up": time_up, "channels": []}
    out = np.zeros(grid.shape, dtype=np.uint8)
    for ch in range(3):
        values = grid[:, :, ch]
        if fixed_range_mps2 is not None:
            lo = 0.0 if magnitude else -float(fixed_range_mps2)
            hi = float(fixed_range_mps2)
            scaling["mode"] = "fixed"
        else:
            lo = float(values.min())
            hi = float(values.max())
        scaling["channels"].append({"min": lo, "max": hi})
        if hi > lo:
            mapped = np.rint(255.0 * (values - lo) / (hi - lo))
            out[:, :, ch] = np.clip(mapped, 0.0, 255.0).astype(np.uint8)
        # degenerate channel stays 0
    return out, scaling


def decode_image_grid(grid: np.ndarray, scaling: dict) -> np.ndarray:
    """Invert the byte mapping of a pre-resize grid. Quantization limits
    recovery to half a step, (max - min) / 510, per channel; degenerate
    channels decode to their constant."""
    grid = np.asarray(grid)
    out = np.empty(grid.shape, dtype=np.float64)
    for ch, rec in enumerate(scaling["channels"]):
        lo, hi = rec["min"], rec["max"]
        if hi > lo:
            out[:, :, ch] = lo + grid[:, :, ch] / 255.0 * (hi - lo)
        else:
            out[:, :, ch] = lo
    return out


def _resize_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of (h, w, c) float data."""
    h, w = grid.shape[:2]
    ys = np.arange(out_h) * ((h - 1) / (out_h - 1)) if out_h > 1 else np.zeros(1)
    xs = np.arange(out_w) * ((w - 1) / (out_w - 1)) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    rows = grid[y0] * (1.0 - wy) + grid[y1] * wy
    return rows[:, x0] * (1.0 - wx) + rows[:, x1] * wx


def encode_image(
    trial: TrialRecord,
    window: StanceWindow,
    size: int = 227,
    n_points: int | None = None,
    fixed_range_mps2: float | None = None,
    time_up: bool = True,
) -> tuple[np.ndarray, dict]:
    """Encode a trial as a (size, size, 3) uint8 image: byte grid first,
    then corner-aligned bilinear resize of the bytes."""
    grid, scaling = encode_grid(trial, window, n_points, fixed_range_mps2, time_up)
    resized = _resize_bilinear(grid.astype(np.float64), size, size)
    image = np.clip(np.rint(resized), 0.0, 255.0).astype(np.uint8)
    return image, scaling


# --------------------------------------------------------------------------
# Targets

def build_target(
    force: ForceTrack,
    window: StanceWindow,
    subject: SubjectMeta,
    n_points: int = DEFAULT_STANCE_POINTS,
) -> np.ndarray:
    """Stance-normalized, body-weight scaled kinetics target.

    All six channels use the same stance window. Forces are divided by
    mass * g, moments by mass * g * height. The channels are interlaced
    frame-major: (fx, fy, fz, mx, my, mz) at t0, then at t1, and so on,
    giving a vector of 6 * n_points values.
    """
    wave = normalize_stance(force.channels, force.rate_hz, window, n_points)
    bw = subject.mass_kg * GRAVITY_MPS2
    scaled = wave.copy()
    scaled[:, :3] /= bw
    scaled[:, 3:] /= bw * subject.height_m
    return scaled.reshape(-1)


def split_target(target: np.ndarray, n_points: int | None = None) -> np.ndarray:
    """Inverse of the interlace: (6 * n,) -> (n, 6), still body-weight units."""
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 1 or target.size % 6 != 0:
        raise DimensionMismatch(f"target length {target.size} is not a multiple of 6")
    n = target.size // 6 if n_points is None else n_points
    return target.reshape(n, 6)


# --------------------------------------------------------------------------
# Output PCA

@dataclass
class OutputPcaModel:
    mean: np.ndarray  # (d,)
    basis: np.ndarray  # (k, d) rows orthonormal
    explained_variance: np.ndarray  # (k,) non-increasing
    variance_keep: float
    n_points: int
    normalization: dict = field(
        default_factory=lambda: {"force": "mass*g", "moment": "mass*g*height"}
    )

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.mean, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.basis, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.explained_variance, dtype="<f8").tobytes())
        return h.hexdigest()


def fit_output_pca(
    targets: np.ndarray, variance_keep: float = 0.995, k_cap: int = 64
) -> OutputPcaModel:
    """Fit the target-side PCA on training targets (never test data).

    K is the smallest count of components whose cumulative explained
    variance reaches variance_keep, clamped to k_cap. Basis rows are the
    top right singular vectors of the centered target matrix with a
    deterministic sign convention (largest-magnitude element positive).
    Raises TooFewSamples for fewer than 2 targets.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 2 or len(targets) < 2:
        raise TooFewSamples("need at least 2 targets to fit the output PCA")
    if not 0.0 < variance_keep <= 1.0:
        raise ValueError("variance_keep must be in (0, 1]")
    mean = targets.mean(axis=0)
    centered = targets - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    var = s ** 2
    total = float(var.sum())
    if total <= 0.0:
        # all targets identical: one zero-variance component, projections 0
        basis = _fix_signs(vt[:1])
        return OutputPcaModel(
            mean=mean,
            basis=basis,
            explained_variance=np.zeros(1),
            variance_keep=variance_keep,
            n_points=targets.shape[1] // 6,
        )
    ratios = np.cumsum(var) / total
    k = int(np.searchsorted(ratios, variance_keep - 1e-12) + 1)
    k = min(k, k_cap, len(s))
    return OutputPcaModel(
        mean=mean,
        basis=_fix_signs(vt[:k]),
        explained_variance=var[:k] / max(len(targets) - 1, 1),
        variance_keep=variance_keep,
        n_points=targets.shape[1] // 6,
    )


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    out = basis.copy()
    for i, row in enumerate(out):
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            out[i] = -row
    return out


def project_target(model: OutputPcaModel, target: np.ndarray) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    if target.shape[-1] != model.n_features:
        raise DimensionMismatch(
            f"target has {target.shape[-1]} features, model expects {model.n_features}"
        )
    return (target - model.mean) @ model.basis.T


def reconstruct_target(model: OutputPcaModel, coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-1] != model.k:
        raise DimensionMismatch(
            f"got {coeffs.shape[-1]} coefficients, model has {model.k} components"
        )
    return model.mean + coeffs @ model.basis


def save_output_pca(model: OutputPcaModel, dir_path: str | Path) -> Path:
    """Persist as pca.bin (little-endian float64: mean, then basis rows,
    then explained variances) plus pca.json (dims, options, checksum)."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    blob = (
        np.ascontiguousarray(model.mean, dtype="<f8").tobytes()
        + np.ascontiguousarray(model.basis, dtype="<f8").tobytes()
        + np.ascontiguousarray(model.explained_variance, dtype="<f8").tobytes()
    )
    (dir_path / "pca.bin").write_bytes(blob)
    manifest = {
        "n_features": model.n_features,
        "k": model.k,
        "n_points": model.n_points,
        "variance_keep": model.variance_keep,
        "normalization": model.normalization,
        "checksum": model.checksum(),
    }
    with open(dir_path / "pca.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return dir_path


def load_output_pca(dir_path: str | Path) -> OutputPcaModel:
    from .errors import ChecksumMismatch

    dir_path = Path(dir_path)
    with open(dir_path / "pca.json") as fh:
        manifest = json.load(fh)
    blob = (dir_path / "pca.bin").read_bytes()
    d = manifest["n_features"]
    k = manifest["k"]
    data = np.frombuffer(blob, dtype="<f8")
    if data.size != d + k * d + k:
        raise ChecksumMismatch(f"pca.bin holds {data.size} values, expected {d + k * d + k}")
    model = OutputPcaModel(
        mean=data[:d].copy(),
        basis=data[d: d + k * d].reshape(k, d).copy(),
        explained_variance=data[d + k * d:].copy(),
        variance_keep=manifest["variance_keep"],
        n_points=manifest["n_points"],
        normalization=manifest["normalization"],
    )
    if model.checksum() != manifest["checksum"]:
        raise ChecksumMismatch("pca.bin does not match the checksum in pca.json")
    return model


# --------------------------------------------------------------------------
# Sample persistence (PNG + sidecar JSON)

def save_sample(sample: EncodedSample, dir_path: str | Path) -> Path:
    from PIL import Image

    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    png_path = dir_path / f"{sample.trial_id}.png"
    Image.fromarray(sample.image, mode="RGB").save(png_path, format="PNG")
    sidecar = {
        "trial_id": sample.trial_id,
        "image_file": png_path.name,
        "target": None if sample.target is None else [float(v) for v in sample.target],
        "scaling": sample.scaling,
        "movement": sample.movement,
        "stance_limb": sample.stance_limb,
        "mirrored": sample.mirrored,
        "mass_kg": sample.mass_kg,
        "height_m": sample.height_m,
    }
    with open(dir_path / f"{sample.trial_id}.json", "w") as fh:
        json.dump(sidecar, fh, sort_keys=True)
        fh.write("\n")
    return png_path


def load_sample(dir_path: str | Path, trial_id: str) -> EncodedSample:
    from PIL import Image

    dir_path = Path(dir_path)
    with open(dir_path / f"{trial_id}.json") as fh:
        sidecar = json.load(fh)
    image = np.asarray(Image.open(dir_path / sidecar["image_file"]).convert("RGB"))
    target = sidecar["target"]
    return EncodedSample(
        trial_id=sidecar["trial_id"],
        image=image,
        target=None if target is None else np.asarray(target, dtype=np.float64),
        scaling=sidecar["scaling"],
        movement=sidecar["movement"],
        stance_limb=sidecar["stance_limb"],
        mirrored=sidecar["mirrored"],
        mass_kg=sidecar["mass_kg"],
        height_m=sidecar["height_m"],
    )
