"""Compact convolutional regression network, implemented on numpy.

Fixed architecture: conv 3x3x16 (stride 1, same padding) + ReLU + maxpool 2,
conv 3x3x32 + ReLU + maxpool 2, dense 128 + ReLU, dense K linear. The head
regresses the K output-PCA coefficients under the Euclidean loss
L = (1/2N) * sum ||pred - target||^2. Everything runs in float64: training
is deterministic for a fixed seed, and the analytic gradients are checked
against central finite differences in the test suite.

Warm starts (cascade training) copy every layer from a parent bundle except
the final dense layer, which is freshly seeded when the output width
differs; lineage is recorded on the child.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .encode import OutputPcaModel, reconstruct_target
from .errors import ArchitectureMismatch, ChecksumMismatch
from .ingest import SubjectMeta

PARAM_NAMES = (
    "conv1_w", "conv1_b", "conv2_w", "conv2_b",
    "fc1_w", "fc1_b", "fc2_w", "fc2_b",
)


@dataclass
class NetworkSpec:
    input_size: int = 64
    k_outputs: int = 8
    conv_channels: tuple = (16, 32)
    kernel: int = 3
    dense_units: int = 128
    activation: str = "relu"  # relu | identity (identity only for testing)

    def __post_init__(self):
        if self.input_size < 4:
            raise ValueError("input_size must be >= 4")
        if self.k_outputs < 1:
            raise ValueError("k_outputs must be >= 1")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def flat_dim(self) -> int:
        p1 = self.input_size // 2
        p2 = p1 // 2
        return self.conv_channels[1] * p2 * p2


@dataclass
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 20
    val_fraction: float = 0.1
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")


@dataclass
class WeightBundle:
    spec: NetworkSpec
    params: dict  # name -> ndarray, see PARAM_NAMES
    rng_seed: int
    history: list = field(default_factory=list)  # {"epoch", "train_loss", "val_loss"}
    lineage: str | None = None  # parent bundle checksum for warm starts
    pca_checksum: str | None = None

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in PARAM_NAMES:
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}


def init_network(spec: NetworkSpec, seed: int, parent: WeightBundle | None = None) -> WeightBundle:
    """He-uniform initialization (U(+-sqrt(6 / fan_in)), zero biases),
    drawn in a fixed layer order from one seeded stream.

    With a parent bundle, all layers are copied from the parent except the
    final dense layer, which keeps its fresh seeded values when the output
    width differs (and is copied too when it matches). The parent must
    agree on input size, kernel, channel widths and dense width, otherwise
    ArchitectureMismatch.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7)))
    c1, c2 = spec.conv_channels
    k = spec.kernel

    def he_uniform(shape, fan_in):
        limit = math.sqrt(6.0 / fan_in)
        return rng.uniform(-limit, limit, size=shape)

    params = {
        "conv1_w": he_uniform((c1, 3, k, k), 3 * k * k),
        "conv1_b": np.zeros(c1),
        "conv2_w": he_uniform((c2, c1, k, k), c1 * k * k),
        "conv2_b": np.zeros(c2),
        "fc1_w": he_uniform((spec.flat_dim, spec.dense_units), spec.flat_dim),
        "fc1_b": np.zeros(spec.dense_units),
        "fc2_w": he_uniform((spec.dense_units, spec.k_outputs), spec.dense_units),
        "fc2_b": np.zeros(spec.k_outputs),
    }
    lineage = None
    if parent is not None:
        same = (
            parent.spec.input_size == spec.input_size
            and parent.spec.conv_channels == spec.conv_channels
            and parent.spec.kernel == spec.kernel
            and parent.spec.dense_units == spec.dense_units
        )
        if not same:
            raise ArchitectureMismatch(
                f"parent spec {parent.spec} does not match {spec} outside the head"
            )
        for name in PARAM_NAMES[:-2]:
            params[name] = parent.params[name].copy()
        if parent.spec.k_outputs == spec.k_outputs:
            params["fc2_w"] = parent.params["fc2_w"].copy()
            params["fc2_b"] = parent.params["fc2_b"].copy()
        lineage = parent.checksum()
    return WeightBundle(spec=spec, params=params, rng_seed=seed, lineage=lineage)


# --------------------------------------------------------------------------
# Layers

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(n, c, h, w) with same-padding -> (n*h*w, c*k*k) patch matrix."""
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (n, c, h, w, k, k)
    n, c, h, w = x.shape
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def _conv_forward(x, w, b):
    n, c, h, wdt = x.shape
    f = w.shape[0]
    cols = _im2col(x, w.shape[2])
    out = cols @ w.reshape(f, -1).T + b
    return out.reshape(n, h, wdt, f).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, x_shape, w, cols):
    n, c, h, wdt = x_shape
    f, _, k, _ = w.shape
    dout_rows = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (dout_rows.T @ cols).reshape(f, c, k, k)
    db = dout_rows.sum(axis=0)
    dcols = (dout_rows @ w.reshape(f, -1)).reshape(n, h, wdt, c, k, k)
    pad = k // 2
    dxp = np.zeros((n, c, h + 2 * pad, wdt + 2 * pad))
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + h, kj:kj + wdt] += dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    return dw, db, dxp[:, :, pad:pad + h, pad:pad + wdt]


def _pool_forward(x):
    """2x2 max pool, stride 2, floor on odd sizes. Ties route to the first
    max (np.argmax), keeping the backward pass deterministic."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, :, : h2 * 2, : w2 * 2]
    xr = xc.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = np.argmax(xr, axis=-1)
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape):
    n, c, h, w = x_shape
    h2, w2 = h // 2, w // 2
    dxr = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(dxr, idx[..., None], dout[..., None], axis=-1)
    dxc = dxr.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2 * 2, w2 * 2)
    if h2 * 2 == h and w2 * 2 == w:
        return dxc
    dx = np.zeros((n, c, h, w))
    dx[:, :, : h2 * 2, : w2 * 2] = dxc
    return dx


def _activate(z, activation):
    return np.maximum(z, 0.0) if activation == "relu" else z


def _activate_grad(z, activation):
    return (z > 0.0).astype(np.float64) if activation == "relu" else np.ones_like(z)


def _as_batch_real(images: np.ndarray) -> np.ndarray:
    """Accept (h, w, 3) or (n, h, w, 3), bytes or reals. Bytes are scaled
    to [0, 1] exactly once; real input is taken as already scaled."""
    x = np.asarray(images)
    if x.ndim == 3:
        x = x[None]
    if x.dtype == np.uint8:
        x = x.astype(np.float64) / 255.0
    else:
        x = x.astype(np.float64, copy=False)
    return x


def _forward_batch(params: dict, x: np.ndarray, spec: NetworkSpec, want_cache: bool):
    act = spec.activation
    x1 = x.transpose(0, 3, 1, 2)
    z1, cols1 = _conv_forward(x1, params["conv1_w"], params["conv1_b"])
    a1 = _activate(z1, act)
    p1, idx1 = _pool_forward(a1)
    z2, cols2 = _conv_forward(p1, params["conv2_w"], params["conv2_b"])
    a2 = _activate(z2, act)
    p2, idx2 = _pool_forward(a2)
    flat = p2.reshape(len(x), -1)
    z3 = flat @ params["fc1_w"] + params["fc1_b"]
    a3 = _activate(z3, act)
    out = a3 @ params["fc2_w"] + params["fc2_b"]
    if not want_cache:
        return out, None
    cache = {
        "x1": x1, "z1": z1, "cols1": cols1, "idx1": idx1, "p1": p1,
        "z2": z2, "cols2": cols2, "idx2": idx2, "p2": p2,
        "flat": flat, "z3": z3, "a3": a3,
    }
    return out, cache


def _backward_batch(params: dict, cache: dict, dout: np.ndarray, spec: NetworkSpec) -> dict:
    act = spec.activation
    grads = {}
    grads["fc2_w"] = cache["a3"].T @ dout
    grads["fc2_b"] = dout.sum(axis=0)
    da3 = dout @ params["fc2_w"].T
    dz3 = da3 * _activate_grad(cache["z3"], act)
    grads["fc1_w"] = cache["flat"].T @ dz3
    grads["fc1_b"] = dz3.sum(axis=0)
    dflat = dz3 @ params["fc1_w"].T
    dp2 = dflat.reshape(cache["p2"].shape)
    da2 = _pool_backward(dp2, cache["idx2"], cache["z2"].shape)
    dz2 = da2 * _activate_grad(cache["z2"], act)
    grads["conv2_w"], grads["conv2_b"], dp1 = _conv_backward(
        dz2, cache["p1"].shape, params["conv2_w"], cache["cols2"]
    )
    da1 = _pool_backward(dp1, cache["idx1"], cache["z1"].shape)
    dz1 = da1 * _activate_grad(cache["z1"], act)
    grads["conv1_w"], grads["conv1_b"], _ = _conv_backward(
        dz1, cache["x1"].shape, params["conv1_w"], cache["cols1"]
    )
    return grads


def forward(bundle: WeightBundle, images: np.ndarray) -> np.ndarray:
    """Network output for one image (h, w, 3) or a batch (n, h, w, 3).
    Byte images are converted to reals exactly once (division by 255), so
    forward(bytes) == forward(bytes / 255.0)."""
    x = _as_batch_real(images)
    if x.shape[1] != bundle.spec.input_size or x.shape[2] != bundle.spec.input_size:
        raise ArchitectureMismatch(
            f"image is {x.shape[1]}x{x.shape[2]}, network expects "
            f"{bundle.spec.input_size}x{bundle.spec.input_size}"
        )
    out, _ = _forward_batch(bundle.params, x, bundle.spec, want_cache=False)
    return out[0] if np.asarray(images).ndim == 3 else out


def euclidean_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """L = (1/2N) * sum of squared residuals; gradient (pred - target) / N."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    n = len(pred)
    diff = pred - target
    return float((diff ** 2).sum() / (2.0 * n)), diff / n


# --------------------------------------------------------------------------
# Training

def train(
    bundle: WeightBundle,
    images: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
) -> WeightBundle:
    """SGD with momentum on the Euclidean loss.

    The validation split and every epoch's shuffle come from seeded
    permutations, so a rerun with the same seed is bit-reproducible. The
    epoch's train loss is the mean of its batch losses; validation loss is
    a full pass. The weights with the best validation loss are retained
    (final weights when the validation split rounds to zero samples).
    epochs=0 returns the input weights unchanged.
    """
    x = _as_batch_real(images)
    y = np.asarray(targets, dtype=np.float64)
    if len(x) != len(y):
        raise ValueError("images and targets disagree in length")
    if y.ndim != 2 or y.shape[1] != bundle.spec.k_outputs:
        raise ValueError(f"targets must be (n, {bundle.spec.k_outputs})")

    n = len(x)
    perm = np.random.default_rng(np.random.SeedSequence((cfg.seed, 17))).permutation(n)
    n_val = int(round(cfg.val_fraction * n))
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    if len(train_idx) == 0:
        raise ValueError("validation split leaves no training samples")

    params = bundle.copy_params()
    velocity = {name: np.zeros_like(p) for name, p in params.items()}
    history = list(bundle.history)
    best_val = math.inf
    best_params = None

    for epoch in range(cfg.epochs):
        if cfg.shuffle:
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 101 + epoch)))
            order = train_idx[rng.permutation(len(train_idx))]
        else:
            order = train_idx
        batch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            out, cache = _forward_batch(params, x[idx], bundle.spec, want_cache=True)
            loss, dout = euclidean_loss(out, y[idx])
            grads = _backward_batch(params, cache, dout, bundle.spec)
            for name in PARAM_NAMES:
                velocity[name] = cfg.momentum * velocity[name] - cfg.lr * grads[name]
                params[name] = params[name] + velocity[name]
            batch_losses.append(loss)
        train_loss = float(np.mean(batch_losses))
        val_loss = None
        if n_val > 0:
            val_out, _ = _forward_batch(params, x[val_idx], bundle.spec, want_cache=False)
            val_loss, _ = euclidean_loss(val_out, y[val_idx])
            if val_loss < best_val:
                best_val = val_loss
                best_params = {k: v.copy() for k, v in params.items()}
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})

    final = best_params if best_params is not None else params
    return replace(bundle, params=final, history=history)


# --------------------------------------------------------------------------
# Gradient check

def _pool_runner_up(z_act: np.ndarray):
    """Per 2x2 block: (winner value, runner-up value, winner idx, runner idx)
    over the activated values feeding a pool."""
    n, c, h, w = z_act.shape
    h2, w2 = h // 2, w // 2
    zr = (
        z_act[:, :, : h2 * 2, : w2 * 2]
        .reshape(n, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2, w2, 4)
    )
    order = np.argsort(zr, axis=-1)
    win = order[..., 3]
    run = order[..., 2]
    wv = np.take_along_axis(zr, win[..., None], axis=-1)[..., 0]
    rv = np.take_along_axis(zr, run[..., None], axis=-1)[..., 0]
    return zr, wv, rv, win, run


def fd_probe_batch(
    bundle: WeightBundle,
    n_samples: int = 4,
    seed: int = 0,
    margin: float = 0.05,
    steps: int = 400,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic batch on which finite differences are trustworthy.

    A finite-difference probe shifts every pre-activation by O(h). Where a
    ReLU sign or a pool argmax flips inside the probe interval, the loss
    slice stops being quadratic and the central difference is garbage, so
    the check needs a batch whose activation margins exceed the probe
    shift everywhere. Starting from a seeded random batch, this pushes
    pre-activations away from zero and pool winners away from their
    runners-up (gradient steps on hinge potentials, clipped to [0.05, 1])
    until every margin clears ``margin``, which is far above the shift an
    h = 1e-3 probe can cause. Identity-activation bundles skip the ReLU
    hinges and harden raw pool gaps instead.
    """
    spec = bundle.spec
    params = bundle.params
    act = spec.activation
    rng = np.random.default_rng(np.random.SeedSequence((seed, 29)))
    s = spec.input_size
    x = rng.uniform(0.2, 0.9, size=(n_samples, s, s, 3))
    y = 0.5 * rng.standard_normal((n_samples, spec.k_outputs))

    gap_margin = 2.0 * margin
    for _ in range(steps):
        out, cache = _forward_batch(params, x, spec, want_cache=True)
        pushes = {}
        total_viol = 0
        for zname in ("z1", "z2", "z3"):
            z = cache[zname]
            d = np.zeros_like(z)
            if act == "relu":
                low = np.abs(z) < margin
                # Treat an exact zero as positive so it gets pushed somewhere.
                d[low] = np.where(z[low] >= 0.0, 1.0, -1.0)
                total_viol += int(low.sum())
            pushes[zname] = d
        for zname in ("z1", "z2"):
            z_act = _activate(cache[zname], act)
            zr, wv, rv, win, run = _pool_runner_up(z_act)
            # Only a live contest can flip: with ReLU, a runner pinned at
            # zero cannot pass a winner that keeps its own margin.
            live = (wv - rv < gap_margin) & ((rv > 0.0) if act == "relu" else True)
            if act == "relu":
                live &= wv > 0.0
            total_viol += int(live.sum())
            dz = pushes[zname]
            n, c, h2, w2, _ = zr.shape
            dzr = np.zeros_like(zr)
            np.put_along_axis(dzr, win[..., None], np.where(live, 1.0, 0.0)[..., None], axis=-1)
            add = np.zeros_like(zr)
            np.put_along_axis(add, run[..., None], np.where(live, -1.0, 0.0)[..., None], axis=-1)
            dzr += add
            dblk = (
                dzr.reshape(n, c, h2, w2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h2 * 2, w2 * 2)
            )
            full = np.zeros_like(dz)
            full[:, :, : h2 * 2, : w2 * 2] = dblk
            if act == "relu":
                full *= cache[zname] > 0.0
            dz += full
        if total_viol == 0:
            break
        # Push the violations back to pixel space through the current
        # (locally linear) routing and take a small clipped step.
        dz3 = pushes["z3"]
        dflat = dz3 @ params["fc1_w"].T
        dp2 = dflat.reshape(cache["p2"].shape)
        da2 = _pool_backward(dp2, cache["idx2"], cache["z2"].shape)
        dz2 = da2 * _activate_grad(cache["z2"], act) + pushes["z2"]
        _, _, dp1 = _conv_backward(dz2, cache["p1"].shape, params["conv2_w"], cache["cols2"])
        da1 = _pool_backward(dp1, cache["idx1"], cache["z1"].shape)
        dz1 = da1 * _activate_grad(cache["z1"], act) + pushes["z1"]
        _, _, dx1 = _conv_backward(dz1, cache["x1"].shape, params["conv1_w"], cache["cols1"])
        dx = dx1.transpose(0, 2, 3, 1)
        scale = np.abs(dx).max()
        if scale == 0.0:
            break
        x = np.clip(x + (0.02 / scale) * dx, 0.05, 1.0)

    # Targets sit near the network output: small residuals keep the loss
    # small, which keeps the cancellation error of (L(w+h) - L(w-h)) small
    # relative to the gradients being checked.
    out, _ = _forward_batch(params, x, spec, want_cache=False)
    noise = np.random.default_rng(np.random.SeedSequence((seed, 31)))
    y = out + 0.1 * noise.standard_normal(out.shape)
    return x, y


def grad_check(
    bundle: WeightBundle,
    images: np.ndarray,
    targets: np.ndarray,
    h: float = 1e-3,
    grad_fn=None,
) -> float:
    """Max relative error between analytic gradients and central finite
    differences, |ga - gf| / max(|ga|, |gf|, 1e-8) over every parameter.
    ``grad_fn(params) -> grads`` may be substituted to exercise the check
    itself (a corrupted backward pass must be caught)."""
    x = _as_batch_real(images)
    y = np.asarray(targets, dtype=np.float64)
    params = bundle.copy_params()

    def loss_at(p):
        out, _ = _forward_batch(p, x, bundle.spec, want_cache=False)
        return euclidean_loss(out, y)[0]

    if grad_fn is None:
        out, cache = _forward_batch(params, x, bundle.spec, want_cache=True)
        _, dout = euclidean_loss(out, y)
        analytic = _backward_batch(params, cache, dout, bundle.spec)
    else:
        analytic = grad_fn(params)

    worst = 0.0
    for name in PARAM_NAMES:
        flat = params[name].ravel()
        ga = analytic[name].ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_at(params)
            flat[i] = keep - h
            dn = loss_at(params)
            flat[i] = keep
            gf = (up - dn) / (2.0 * h)
            err = abs(ga[i] - gf) / max(abs(ga[i]), abs(gf), 1e-8)
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# Prediction

FORCE_KEYS = ("fx", "fy", "fz", "mx", "my", "mz")


def predict_waveforms(
    bundle: WeightBundle,
    pca: OutputPcaModel,
    image: np.ndarray,
    subject: SubjectMeta,
) -> dict:
    """Image -> K coefficients -> reconstructed target -> de-normalized
    stance waveforms (newtons and newton-metres) keyed fx..mz. The bundle
    must have been trained against this PCA; a checksum mismatch refuses to
    predict rather than silently mixing bases."""
    if bundle.pca_checksum is not None and bundle.pca_checksum != pca.checksum():
        raise ChecksumMismatch("model was trained against a different output PCA")
    if bundle.spec.k_outputs != pca.k:
        raise ChecksumMismatch(
            f"model emits {bundle.spec.k_outputs} coefficients, PCA holds {pca.k}"
        )
    coeffs = forward(bundle, image)
    wave = reconstruct_target(pca, coeffs).reshape(pca.n_points, 6).copy()
    bw = subject.mass_kg * 9.81
    wave[:, :3] *= bw
    wave[:, 3:] *= bw * subject.height_m
    return {key: wave[:, i].copy() for i, key in enumerate(FORCE_KEYS)}


# --------------------------------------------------------------------------
# Persistence

def save_model(bundle: WeightBundle, dir_path: str | Path) -> Path:
    """model.bin: little-endian float64, parameters concatenated in
    PARAM_NAMES order. model.json: architecture, seed, lineage, history,
    PCA binding and the weight checksum."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    blob = b"".join(
        np.ascontiguousarray(bundle.params[name], dtype="<f8").tobytes()
        for name in PARAM_NAMES
    )
    (dir_path / "model.bin").write_bytes(blob)
    manifest = {
        "spec": {
            "input_size": bundle.spec.input_size,
            "k_outputs": bundle.spec.k_outputs,
            "conv_channels": list(bundle.spec.conv_channels),
            "kernel": bundle.spec.kernel,
            "dense_units": bundle.spec.dense_units,
            "activation": bundle.spec.activation,
        },
        "rng_seed": bundle.rng_seed,
        "history": bundle.history,
        "lineage": bundle.lineage,
        "pca_checksum": bundle.pca_checksum,
        "checksum": bundle.checksum(),
    }
    with open(dir_path / "model.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return dir_path


def load_model(dir_path: str | Path) -> WeightBundle:
    dir_path = Path(dir_path)
    with open(dir_path / "model.json") as fh:
        manifest = json.load(fh)
    s = manifest["spec"]
    spec = NetworkSpec(
        input_size=s["input_size"],
        k_outputs=s["k_outputs"],
        conv_channels=tuple(s["conv_channels"]),
        kernel=s["kernel"],
        dense_units=s["dense_units"],
        activation=s["activation"],
    )
    c1, c2 = spec.conv_channels
    k = spec.kernel
    shapes = {
        "conv1_w": (c1, 3, k, k), "conv1_b": (c1,),
        "conv2_w": (c2, c1, k, k), "conv2_b": (c2,),
        "fc1_w": (spec.flat_dim, spec.dense_units), "fc1_b": (spec.dense_units,),
        "fc2_w": (spec.dense_units, spec.k_outputs), "fc2_b": (spec.k_outputs,),
    }
    data = np.frombuffer((dir_path / "model.bin").read_bytes(), dtype="<f8")
    params = {}
    offset = 0
    for name in PARAM_NAMES:
        size = int(np.prod(shapes[name]))
        params[name] = data[offset: offset + size].reshape(shapes[name]).copy()
        offset += size
    if offset != data.size:
        raise ChecksumMismatch(f"model.bin holds {data.size} values, expected {offset}")
    bundle = WeightBundle(
        spec=spec,
        params=params,
        rng_seed=manifest["rng_seed"],
        history=manifest["history"],
        lineage=manifest["lineage"],
        pca_checksum=manifest["pca_checksum"],
    )
    if bundle.checksum() != manifest["checksum"]:
        raise ChecksumMismatch("model.bin does not match the checksum in model.json")
    return bundle
