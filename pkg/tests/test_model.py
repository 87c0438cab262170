"""Network init, loss, gradients, training determinism, persistence."""

from __future__ import annotations

import math

import numpy as np
import pytest

from accel2grf.encode import fit_output_pca, project_target, split_target
from accel2grf.errors import ArchitectureMismatch, ChecksumMismatch
from accel2grf.ingest import SubjectMeta
from accel2grf.model import (
    PARAM_NAMES,
    NetworkSpec,
    TrainConfig,
    WeightBundle,
    _backward_batch,
    _forward_batch,
    euclidean_loss,
    fd_probe_batch,
    forward,
    grad_check,
    init_network,
    load_model,
    predict_waveforms,
    save_model,
    train,
)

SMALL = NetworkSpec(input_size=8, k_outputs=3, dense_units=16)


# --------------------------------------------------------------------------
# euclidean_loss

def test_loss_zero_on_equal():
    pred = np.arange(12.0).reshape(3, 4)
    loss, grad = euclidean_loss(pred, pred.copy())
    assert loss == 0.0
    assert np.array_equal(grad, np.zeros_like(pred))


def test_loss_single_sample_all_ones():
    k = 7
    loss, grad = euclidean_loss(np.ones((1, k)), np.zeros((1, k)))
    assert loss == k / 2.0
    assert np.array_equal(grad, np.ones((1, k)))


def test_loss_two_sample_hand_value():
    pred = np.array([[2.0, 0.0], [0.0, 4.0]])
    target = np.zeros((2, 2))
    loss, grad = euclidean_loss(pred, target)  # norms^2 are 4 and 16
    assert loss == (4.0 + 16.0) / 4.0
    assert np.array_equal(grad, pred / 2.0)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        euclidean_loss(np.zeros((2, 3)), np.zeros((2, 4)))


# --------------------------------------------------------------------------
# init

def test_init_deterministic_and_seed_sensitive():
    a = init_network(SMALL, seed=5)
    b = init_network(SMALL, seed=5)
    c = init_network(SMALL, seed=6)
    assert a.checksum() == b.checksum()
    assert a.checksum() != c.checksum()
    for name in PARAM_NAMES:
        assert a.params[name].tobytes() == b.params[name].tobytes()
    for name in ("conv1_b", "conv2_b", "fc1_b", "fc2_b"):
        assert np.array_equal(a.params[name], np.zeros_like(a.params[name]))


def test_cascade_copies_body_freshens_head():
    parent = init_network(SMALL, seed=5)
    child_spec = NetworkSpec(input_size=8, k_outputs=5, dense_units=16)
    child = init_network(child_spec, seed=9, parent=parent)
    for name in PARAM_NAMES[:-2]:
        assert child.params[name].tobytes() == parent.params[name].tobytes()
    fresh = init_network(child_spec, seed=9)
    assert child.params["fc2_w"].tobytes() == fresh.params["fc2_w"].tobytes()
    assert child.lineage == parent.checksum()


def test_cascade_equal_k_copies_head_too():
    parent = init_network(SMALL, seed=5)
    child = init_network(SMALL, seed=9, parent=parent)
    for name in PARAM_NAMES:
        assert child.params[name].tobytes() == parent.params[name].tobytes()


def test_cascade_rejects_body_mismatch():
    parent = init_network(SMALL, seed=5)
    with pytest.raises(ArchitectureMismatch):
        init_network(NetworkSpec(input_size=8, k_outputs=3, dense_units=32),
                     seed=9, parent=parent)


# --------------------------------------------------------------------------
# forward

def test_forward_accepts_bytes_and_reals(rng):
    bundle = init_network(SMALL, seed=0)
    img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    out_b = forward(bundle, img)
    out_r = forward(bundle, img.astype(np.float64) / 255.0)
    assert np.array_equal(out_b, out_r)
    batch = forward(bundle, img[None])
    assert batch.shape == (1, 3)
    assert np.array_equal(batch[0], out_b)


def test_forward_zero_weights_emit_biases(rng):
    bundle = init_network(SMALL, seed=0)
    for name in PARAM_NAMES:
        bundle.params[name] = np.zeros_like(bundle.params[name])
    bundle.params["fc2_b"] = np.array([1.5, -2.0, 0.25])
    img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    assert np.array_equal(forward(bundle, img), [1.5, -2.0, 0.25])


def test_forward_head_is_linear(rng):
    bundle = init_network(SMALL, seed=1)
    img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    base = forward(bundle, img)
    bundle.params["fc2_w"] = bundle.params["fc2_w"] * 2.0
    bundle.params["fc2_b"] = bundle.params["fc2_b"] * 2.0
    assert np.allclose(forward(bundle, img), 2.0 * base, atol=1e-12)


def test_forward_rejects_wrong_size(rng):
    bundle = init_network(SMALL, seed=0)
    with pytest.raises(ArchitectureMismatch):
        forward(bundle, rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))


# --------------------------------------------------------------------------
# gradients

def test_grad_check_linear_network():
    spec = NetworkSpec(input_size=4, k_outputs=2, dense_units=8,
                       activation="identity")
    bundle = init_network(spec, seed=0)
    x, y = fd_probe_batch(bundle, n_samples=2, seed=0)
    assert grad_check(bundle, x, y) <= 1e-8


def test_grad_check_full_network_seed0():
    bundle = init_network(NetworkSpec(input_size=8, k_outputs=3, dense_units=8),
                          seed=0)
    x, y = fd_probe_batch(bundle, n_samples=4, seed=0)
    assert grad_check(bundle, x, y) <= 1e-4


def test_grad_check_catches_corrupted_backward():
    bundle = init_network(NetworkSpec(input_size=8, k_outputs=3, dense_units=8),
                          seed=0)
    x, y = fd_probe_batch(bundle, n_samples=2, seed=0)

    def corrupted(params):
        out, cache = _forward_batch(params, np.asarray(x, dtype=np.float64),
                                    bundle.spec, want_cache=True)
        _, dout = euclidean_loss(out, y)
        grads = _backward_batch(params, cache, dout, bundle.spec)
        grads["conv1_w"] = grads["conv1_w"] * 1.5  # a plausible scaling bug
        return grads

    assert grad_check(bundle, x, y, grad_fn=corrupted) > 1e-2


# --------------------------------------------------------------------------
# train

def _toy_dataset(rng, n=24, size=8, k=3):
    """Images whose channel means linearly determine the targets, plus a
    little noise: learnable by the head alone."""
    x = rng.uniform(0.0, 1.0, (n, size, size, 3))
    means = x.mean(axis=(1, 2))
    w = rng.standard_normal((3, k))
    y = means @ w + 0.01 * rng.standard_normal((n, k))
    return x, y


def test_train_deterministic(rng):
    x, y = _toy_dataset(rng)
    cfg = TrainConfig(epochs=3, batch_size=4, seed=11)
    a = train(init_network(SMALL, seed=2), x, y, cfg)
    b = train(init_network(SMALL, seed=2), x, y, cfg)
    assert a.checksum() == b.checksum()
    assert a.history == b.history


def test_epochs_zero_is_identity(rng):
    x, y = _toy_dataset(rng)
    bundle = init_network(SMALL, seed=2)
    out = train(bundle, x, y, TrainConfig(epochs=0, seed=1))
    assert out.checksum() == bundle.checksum()
    assert out.history == []


def test_history_records_every_epoch(rng):
    x, y = _toy_dataset(rng)
    out = train(init_network(SMALL, seed=2), x, y,
                TrainConfig(epochs=4, batch_size=4, seed=11))
    assert [h["epoch"] for h in out.history] == [0, 1, 2, 3]
    for h in out.history:
        assert h["train_loss"] >= 0.0 and h["val_loss"] >= 0.0


def test_train_loss_windowed_monotone(rng):
    x, y = _toy_dataset(rng, n=32)
    out = train(init_network(SMALL, seed=2), x, y,
                TrainConfig(epochs=12, batch_size=4, seed=11))
    losses = [h["train_loss"] for h in out.history]
    means = [np.mean(losses[i: i + 5]) for i in range(len(losses) - 4)]
    for earlier, later in zip(means, means[1:]):
        assert later <= earlier * 1.01  # downward trend, single-step noise allowed
    assert losses[-1] < losses[0]


def test_duplicate_dataset_equivalence(rng):
    x, y = _toy_dataset(rng, n=4)
    cfg = TrainConfig(epochs=3, batch_size=2, seed=5, shuffle=False,
                      val_fraction=0.01)
    single = train(init_network(SMALL, seed=2), x, y, cfg)
    doubled_cfg = TrainConfig(epochs=3, batch_size=4, seed=5, shuffle=False,
                              val_fraction=0.01)
    doubled = train(init_network(SMALL, seed=2),
                    np.repeat(x, 2, axis=0), np.repeat(y, 2, axis=0), doubled_cfg)
    # gradient sums reorder (4 half-weight terms vs 2), so equality holds
    # to roundoff rather than bit-exactly
    for name in PARAM_NAMES:
        pa, pb = single.params[name], doubled.params[name]
        assert np.max(np.abs(pa - pb) / np.maximum(np.abs(pa), 1e-12)) <= 1e-9
    assert [h["train_loss"] for h in single.history] == pytest.approx(
        [h["train_loss"] for h in doubled.history], abs=1e-12
    )


def test_best_validation_weights_retained(rng):
    x, y = _toy_dataset(rng, n=20)
    cfg = TrainConfig(epochs=8, batch_size=4, seed=3, val_fraction=0.25)
    out = train(init_network(SMALL, seed=2), x, y, cfg)
    best = min(h["val_loss"] for h in out.history)
    perm = np.random.default_rng(np.random.SeedSequence((cfg.seed, 17))).permutation(20)
    val_idx = np.sort(perm[: int(round(cfg.val_fraction * 20))])
    pred = forward(out, x[val_idx])
    recomputed, _ = euclidean_loss(pred, y[val_idx])
    assert recomputed == best


def test_train_validates_shapes(rng):
    x, y = _toy_dataset(rng)
    bundle = init_network(SMALL, seed=2)
    with pytest.raises(ValueError):
        train(bundle, x, y[:-1], TrainConfig())
    with pytest.raises(ValueError):
        train(bundle, x, y[:, :2], TrainConfig())


# --------------------------------------------------------------------------
# predict_waveforms

def _coeff_bundle(pca, coeffs):
    """A network that ignores its input and emits fixed coefficients."""
    spec = NetworkSpec(input_size=8, k_outputs=pca.k, dense_units=8)
    bundle = init_network(spec, seed=0)
    for name in PARAM_NAMES:
        bundle.params[name] = np.zeros_like(bundle.params[name])
    bundle.params["fc2_b"] = np.asarray(coeffs, dtype=np.float64)
    bundle.pca_checksum = pca.checksum()
    return bundle


SUBJECT = SubjectMeta(mass_kg=70.0, height_m=1.75)


def test_predict_round_trips_projection(rng):
    n_points = 5
    targets = rng.standard_normal((80, 6 * n_points))
    pca = fit_output_pca(targets, variance_keep=1.0)
    assert pca.k == 6 * n_points
    original = targets[7]
    bundle = _coeff_bundle(pca, project_target(pca, original))
    waves = predict_waveforms(bundle, pca, np.zeros((8, 8, 3), dtype=np.uint8),
                              SUBJECT)
    truth = split_target(original)
    bw = SUBJECT.mass_kg * 9.81
    for i, key in enumerate(("fx", "fy", "fz", "mx", "my", "mz")):
        scale = bw if i < 3 else bw * SUBJECT.height_m
        assert np.max(np.abs(waves[key] - truth[:, i] * scale)) <= 1e-6


def test_predict_zero_output_gives_denormalized_mean(rng):
    targets = rng.standard_normal((30, 12))
    pca = fit_output_pca(targets, variance_keep=1.0)
    bundle = _coeff_bundle(pca, np.zeros(pca.k))
    waves = predict_waveforms(bundle, pca, np.zeros((8, 8, 3), dtype=np.uint8),
                              SUBJECT)
    mean = split_target(pca.mean)
    bw = SUBJECT.mass_kg * 9.81
    assert np.allclose(waves["fz"], mean[:, 2] * bw, atol=1e-12)
    assert np.allclose(waves["my"], mean[:, 4] * bw * SUBJECT.height_m, atol=1e-12)


def test_predict_refuses_foreign_pca(rng):
    targets = rng.standard_normal((30, 12))
    pca = fit_output_pca(targets, variance_keep=1.0)
    bundle = _coeff_bundle(pca, np.zeros(pca.k))
    bundle.pca_checksum = "0" * 64
    with pytest.raises(ChecksumMismatch):
        predict_waveforms(bundle, pca, np.zeros((8, 8, 3), dtype=np.uint8), SUBJECT)


# --------------------------------------------------------------------------
# persistence

def test_model_round_trip(tmp_path, rng):
    x, y = _toy_dataset(rng, n=8)
    bundle = train(init_network(SMALL, seed=2), x, y,
                   TrainConfig(epochs=2, batch_size=4, seed=1))
    bundle.pca_checksum = "ab" * 32
    save_model(bundle, tmp_path)
    loaded = load_model(tmp_path)
    assert loaded.checksum() == bundle.checksum()
    assert loaded.spec == bundle.spec
    assert loaded.history == bundle.history
    assert loaded.pca_checksum == bundle.pca_checksum
    assert loaded.rng_seed == bundle.rng_seed
    for name in PARAM_NAMES:
        assert loaded.params[name].tobytes() == bundle.params[name].tobytes()


def test_model_load_rejects_corruption(tmp_path):
    bundle = init_network(SMALL, seed=2)
    save_model(bundle, tmp_path)
    blob = bytearray((tmp_path / "model.bin").read_bytes())
    blob[100] ^= 0x01
    (tmp_path / "model.bin").write_bytes(bytes(blob))
    with pytest.raises(ChecksumMismatch):
        load_model(tmp_path)
