"""Image encoding, kinetics targets, and the output-side PCA."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from accel2grf.align import euclidean_norm_align
from accel2grf.encode import (
    EncodedSample,
    build_target,
    decode_image_grid,
    encode_grid,
    encode_image,
    fit_output_pca,
    load_output_pca,
    load_sample,
    project_target,
    reconstruct_target,
    save_output_pca,
    save_sample,
    split_target,
    _resize_bilinear,
)
from accel2grf.errors import ChecksumMismatch, DimensionMismatch, TooFewSamples
from accel2grf.gait import StanceWindow
from accel2grf.ingest import ForceTrack, SubjectMeta, TrackKind

from conftest import LOCATION_NAMES, make_trial

SUBJECT = SubjectMeta(mass_kg=70.0, height_m=1.75)
BW = 70.0 * 9.81


def _full_window(n: int = 101, rate: float = 250.0) -> StanceWindow:
    return StanceWindow(fs_frame=0, to_frame=n - 1, rate_hz=rate)


def _grid_trial(samples_by_location, n=101):
    return make_trial(samples_by_location, n=n, rate_hz=250.0)


# --------------------------------------------------------------------------
# encode_grid / decode_image_grid

def test_single_hot_cell_hits_green_255():
    hot = np.zeros((101, 3))
    hot[10, 1] = 4.2  # anterior spike on the left thigh at stance frame 10
    grid, scaling = encode_grid(_grid_trial({"LThigh": hot}), _full_window())
    assert grid.shape == (101, 5, 3)
    # row 0 is the LAST stance frame, so frame 10 lands on row 90
    assert grid[90, 1, 1] == 255
    assert grid.sum() == 255  # everything else black
    assert scaling["channels"][1] == {"min": 0.0, "max": 4.2}


def test_time_up_false_keeps_frame_order():
    hot = np.zeros((101, 3))
    hot[10, 1] = 4.2
    grid, _ = encode_grid(_grid_trial({"LThigh": hot}), _full_window(), time_up=False)
    assert grid[10, 1, 1] == 255


def test_all_zero_trial_encodes_black():
    grid, scaling = encode_grid(_grid_trial({}), _full_window())
    assert grid.sum() == 0
    for rec in scaling["channels"]:
        assert rec["min"] == rec["max"] == 0.0


def test_magnitude_trial_is_grayscale(rng):
    samples = {name: rng.standard_normal((101, 3)) for name in LOCATION_NAMES}
    trial = _grid_trial(samples)
    trial = replace(trial, sensors=[euclidean_norm_align(t) for t in trial.sensors])
    grid, _ = encode_grid(trial, _full_window())
    assert np.array_equal(grid[:, :, 0], grid[:, :, 1])
    assert np.array_equal(grid[:, :, 1], grid[:, :, 2])


def test_decode_within_half_quantization_step(rng):
    for _ in range(100):
        samples = {name: rng.uniform(-30, 30, (13, 3)) for name in LOCATION_NAMES}
        trial = _grid_trial(samples, n=13)
        window = _full_window(13)
        grid, scaling = encode_grid(trial, window, n_points=13)
        decoded = decode_image_grid(grid, scaling)
        truth = np.stack([samples[name] for name in LOCATION_NAMES], axis=1)[::-1]
        for ch, rec in enumerate(scaling["channels"]):
            step = (rec["max"] - rec["min"]) / 510.0
            err = np.max(np.abs(decoded[:, :, ch] - truth[:, :, ch]))
            assert err <= step + 1e-12


def test_byte_map_is_monotone(rng):
    samples = {name: rng.uniform(-30, 30, (13, 3)) for name in LOCATION_NAMES}
    trial = _grid_trial(samples, n=13)
    grid, _ = encode_grid(trial, _full_window(13), n_points=13)
    truth = np.stack([samples[name] for name in LOCATION_NAMES], axis=1)[::-1]
    for ch in range(3):
        v = truth[:, :, ch].ravel()
        b = grid[:, :, ch].ravel().astype(int)
        order = np.argsort(v)
        assert np.all(np.diff(b[order]) >= 0)


def test_fixed_range_clips():
    hot = np.zeros((101, 3))
    hot[5, 0] = 100.0   # beyond +60 clips to 255
    hot[6, 0] = -100.0  # beyond -60 clips to 0
    hot[7, 0] = 0.0     # center of [-60, 60] maps to round(127.5) = 128
    grid, scaling = encode_grid(
        _grid_trial({"Pelvis": hot}), _full_window(), fixed_range_mps2=60.0
    )
    assert scaling["mode"] == "fixed"
    assert grid[101 - 1 - 5, 0, 0] == 255
    assert grid[101 - 1 - 6, 0, 0] == 0
    assert grid[101 - 1 - 7, 0, 0] == 128


def test_fixed_range_magnitude_uses_zero_floor(rng):
    samples = {name: rng.uniform(-3, 3, (101, 3)) for name in LOCATION_NAMES}
    trial = _grid_trial(samples)
    trial = replace(trial, sensors=[euclidean_norm_align(t) for t in trial.sensors])
    _, scaling = encode_grid(trial, _full_window(), fixed_range_mps2=60.0)
    for rec in scaling["channels"]:
        assert rec == {"min": 0.0, "max": 60.0}


def test_sensor_order_permutation_invariant(rng):
    samples = {name: rng.standard_normal((101, 3)) for name in LOCATION_NAMES}
    trial = _grid_trial(samples)
    shuffled = replace(trial, sensors=list(reversed(trial.sensors)))
    a, _ = encode_grid(trial, _full_window())
    b, _ = encode_grid(shuffled, _full_window())
    assert np.array_equal(a, b)


# --------------------------------------------------------------------------
# bilinear resize

def test_bilinear_exact_on_linear_data():
    row = np.arange(5, dtype=np.float64)
    grid = (2.0 * row[:, None] + 3.0 * row[None, :])[:, :, None]
    out = _resize_bilinear(grid, 9, 9)
    half = np.arange(9) * 0.5
    expected = (2.0 * half[:, None] + 3.0 * half[None, :])[:, :, None]
    assert np.max(np.abs(out - expected)) <= 1e-12


def test_bilinear_corners_preserved(rng):
    grid = rng.standard_normal((7, 5, 3))
    out = _resize_bilinear(grid, 16, 16)
    for (i, j), (oi, oj) in zip(
        [(0, 0), (0, 4), (6, 0), (6, 4)], [(0, 0), (0, 15), (15, 0), (15, 15)]
    ):
        assert np.allclose(out[oi, oj], grid[i, j], atol=1e-12)


def test_encode_image_shape_and_determinism(rng):
    samples = {name: rng.standard_normal((101, 3)) for name in LOCATION_NAMES}
    trial = _grid_trial(samples)
    a, _ = encode_image(trial, _full_window(), size=32)
    b, _ = encode_image(trial, _full_window(), size=32)
    assert a.shape == (32, 32, 3) and a.dtype == np.uint8
    assert np.array_equal(a, b)


# --------------------------------------------------------------------------
# build_target / split_target

def _force_with(channel: int, value: float, n: int = 500) -> ForceTrack:
    channels = np.zeros((n, 6))
    channels[:, channel] = value
    return ForceTrack(2000.0, channels)


def _force_window(n: int = 500) -> StanceWindow:
    return StanceWindow(fs_frame=100, to_frame=350, rate_hz=2000.0)


def test_constant_bodyweight_fz_maps_to_ones():
    target = build_target(_force_with(2, BW), _force_window(), SUBJECT, n_points=101)
    assert target.shape == (606,)
    assert np.allclose(target[2::6], 1.0, atol=1e-12)
    mask = np.ones(606, bool)
    mask[2::6] = False
    assert np.max(np.abs(target[mask])) == 0.0


def test_moment_scaling_uses_height():
    target = build_target(
        _force_with(3, BW * SUBJECT.height_m), _force_window(), SUBJECT, n_points=2
    )
    assert target.shape == (12,)
    assert np.allclose(target[3::6], 1.0, atol=1e-12)


def test_split_target_inverts_interlace(rng):
    channels = rng.standard_normal((500, 6)) * 100.0
    target = build_target(ForceTrack(2000.0, channels), _force_window(), SUBJECT)
    wave = split_target(target)
    assert wave.shape == (101, 6)
    assert np.array_equal(wave.reshape(-1), target)
    with pytest.raises(DimensionMismatch):
        split_target(target[:-1])


def test_build_target_linear_in_force(rng):
    c1 = rng.standard_normal((500, 6)) * 100.0
    c2 = rng.standard_normal((500, 6)) * 100.0
    a, b = 1.75, -0.5
    combined = build_target(
        ForceTrack(2000.0, a * c1 + b * c2), _force_window(), SUBJECT
    )
    parts = a * build_target(ForceTrack(2000.0, c1), _force_window(), SUBJECT) \
        + b * build_target(ForceTrack(2000.0, c2), _force_window(), SUBJECT)
    assert np.max(np.abs(combined - parts)) <= 1e-12


# --------------------------------------------------------------------------
# output PCA

def _constructed_targets() -> np.ndarray:
    """Four 12-feature targets with exactly known component variances
    (squared singular values 100, 10, 1) and zero mean."""
    u = np.array([
        [1.0, 1.0, 1.0],
        [-1.0, 1.0, -1.0],
        [1.0, -1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ]) / 2.0
    s = np.array([10.0, np.sqrt(10.0), 1.0])
    v = np.zeros((3, 12))
    v[0, 0] = v[1, 1] = v[2, 2] = 1.0
    return (u * s) @ v


def test_component_count_tracks_variance_keep():
    targets = _constructed_targets()
    assert fit_output_pca(targets, variance_keep=0.995).k == 3
    assert fit_output_pca(targets, variance_keep=0.99).k == 2
    assert fit_output_pca(targets, variance_keep=0.5).k == 1
    model = fit_output_pca(targets, variance_keep=1.0)
    assert np.allclose(model.explained_variance[:3] * 3.0, [100.0, 10.0, 1.0],
                       rtol=1e-9)


def test_k_cap_clamps():
    rng = np.random.default_rng(3)
    targets = rng.standard_normal((30, 18))
    assert fit_output_pca(targets, variance_keep=1.0, k_cap=4).k == 4


def test_identical_targets_collapse_to_one_component():
    targets = np.tile(np.arange(12.0), (5, 1))
    model = fit_output_pca(targets)
    assert model.k == 1
    assert np.array_equal(model.explained_variance, [0.0])
    assert np.array_equal(project_target(model, targets[0]), [0.0])
    assert np.allclose(reconstruct_target(model, np.zeros(1)), targets[0], atol=1e-12)


def test_full_rank_projection_is_identity(rng):
    targets = rng.standard_normal((20, 8))
    model = fit_output_pca(targets, variance_keep=1.0)
    assert model.k == 8
    assert np.max(np.abs(model.basis @ model.basis.T - np.eye(8))) <= 1e-9
    x = targets[3]
    assert np.max(np.abs(reconstruct_target(model, project_target(model, x)) - x)) <= 1e-9


def test_projection_of_mean_is_zero(rng):
    model = fit_output_pca(rng.standard_normal((10, 6)))
    assert np.array_equal(project_target(model, model.mean), np.zeros(model.k))


def test_sign_convention_largest_element_positive(rng):
    model = fit_output_pca(rng.standard_normal((25, 9)), variance_keep=1.0)
    for row in model.basis:
        assert row[int(np.argmax(np.abs(row)))] > 0


def test_pca_input_validation():
    with pytest.raises(TooFewSamples):
        fit_output_pca(np.zeros((1, 6)))
    with pytest.raises(ValueError):
        fit_output_pca(np.zeros((4, 6)), variance_keep=0.0)
    model = fit_output_pca(_constructed_targets())
    with pytest.raises(DimensionMismatch):
        project_target(model, np.zeros(7))
    with pytest.raises(DimensionMismatch):
        reconstruct_target(model, np.zeros(model.k + 1))


def test_pca_persistence_round_trip(tmp_path, rng):
    model = fit_output_pca(rng.standard_normal((15, 10)))
    save_output_pca(model, tmp_path)
    loaded = load_output_pca(tmp_path)
    assert np.array_equal(loaded.mean, model.mean)
    assert np.array_equal(loaded.basis, model.basis)
    assert np.array_equal(loaded.explained_variance, model.explained_variance)
    assert loaded.variance_keep == model.variance_keep
    assert loaded.n_points == model.n_points


def test_pca_load_rejects_corruption(tmp_path, rng):
    model = fit_output_pca(rng.standard_normal((15, 10)))
    save_output_pca(model, tmp_path)
    blob = bytearray((tmp_path / "pca.bin").read_bytes())
    blob[40] ^= 0xFF
    (tmp_path / "pca.bin").write_bytes(bytes(blob))
    with pytest.raises(ChecksumMismatch):
        load_output_pca(tmp_path)
    (tmp_path / "pca.bin").write_bytes(bytes(blob[:-8]))
    with pytest.raises(ChecksumMismatch):
        load_output_pca(tmp_path)


# --------------------------------------------------------------------------
# sample persistence

def test_sample_round_trip(tmp_path, rng):
    image = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    target = rng.standard_normal(24)
    sample = EncodedSample(
        trial_id="RunSlow-7-0004",
        image=image,
        target=target,
        scaling={"mode": "per_image", "time_up": True,
                 "channels": [{"min": -1.0, "max": 1.0}] * 3},
        movement="RunSlow",
        stance_limb="Right",
        mirrored=True,
        mass_kg=70.0,
        height_m=1.75,
    )
    save_sample(sample, tmp_path)
    loaded = load_sample(tmp_path, "RunSlow-7-0004")
    assert np.array_equal(loaded.image, image)  # PNG is lossless
    assert np.array_equal(loaded.target, target)  # repr round-trips floats
    assert loaded.scaling == sample.scaling
    assert (loaded.movement, loaded.stance_limb, loaded.mirrored) == (
        "RunSlow", "Right", True
    )


def test_sample_without_target(tmp_path, rng):
    sample = EncodedSample(
        trial_id="t1",
        image=rng.integers(0, 256, (8, 8, 3), dtype=np.uint8),
        target=None,
        scaling={"mode": "fixed", "time_up": True, "channels": []},
    )
    save_sample(sample, tmp_path)
    assert load_sample(tmp_path, "t1").target is None
