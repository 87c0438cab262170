"""Stage orchestration: synth, prepare, train, predict, evaluate, report.

Every stage is a pure function of (config, data root): it reads its inputs
from the previous stage's directory, writes its outputs plus a manifest,
and returns a small summary dict. All randomness is seeded from the config
seed, so rerunning a stage rewrites byte-identical files.

Layout under the data root::

    raw/                         synth output (trials/<id>/ + corpus.csv)
    prepared/<experiment>/       encoded samples (train/, test/), pca.*, manifest
    model/<experiment>/          model.json + model.bin
    predictions/<experiment>/    pred_<trial>.csv per test trial + manifest
    eval/<experiment>/           report.csv, overlay/Bland-Altman CSVs, figures
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from .align import AlignmentMode, align_trial
from .constants import ENV_DATA_ROOT, GRAVITY_MPS2
from .encode import (
    EncodedSample,
    encode_image,
    build_target,
    fit_output_pca,
    load_output_pca,
    load_sample,
    project_target,
    save_output_pca,
    save_sample,
    split_target,
)
from .errors import EmptySubset, IngestError, MissingFile, NoContact
from .gait import (
    Limb,
    MovementClass,
    classify_movement,
    detect_stance_events,
    detect_stance_limb,
    mirror_left_to_right,
)
from .ingest import (
    Location,
    SourceKind,
    SubjectMeta,
    TrackKind,
    TrialRecord,
    dedupe,
    parse_trial,
    quality_gate,
)
from .metrics import CHANNELS, build_report, emit_report
from .model import (
    NetworkSpec,
    TrainConfig,
    init_network,
    load_model,
    predict_waveforms,
    save_model,
    train,
)
from .simulate import SynthSpec, VirtualImuConfig, generate_corpus, virtual_imu_trial

_DEFAULT_SPEEDS = {
    "run_slow": 2.8,
    "run_moderate": 4.4,
    "run_fast": 6.0,
    "run_accel": 4.0,
    "run_decel": 4.0,
    "sidestep": 3.0,
}

_CAPTURE_NAMES = {"norm": "accNORM", "pca": "accPCA"}


def resolve_root(out: str | None, cfg: dict) -> Path:
    """Data root precedence: --out, config data_root, $ACCEL2GRF_DATA_ROOT,
    ./data."""
    if out:
        return Path(out)
    if cfg.get("data_root"):
        return Path(cfg["data_root"])
    env = os.environ.get(ENV_DATA_ROOT)
    if env:
        return Path(env)
    return Path("data")


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# synth

def _mount_rotations(angle_deg: float, seed: int) -> dict | None:
    """One proper rotation of the given magnitude per sensor, about a
    seeded random axis. Models an arbitrary but fixed sensor mounting."""
    if angle_deg <= 0.0:
        return None
    rng = np.random.default_rng(np.random.SeedSequence((seed, 23)))
    rotations = {}
    for location in Location:
        axis = rng.normal(size=3)
        while float(np.linalg.norm(axis)) < 1e-8:
            axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        theta = math.radians(angle_deg)
        k = np.array([
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ])
        rotations[location] = np.eye(3) + math.sin(theta) * k + (1 - math.cos(theta)) * (k @ k)
    return rotations


def stage_synth(cfg: dict, root: Path) -> dict:
    raw = root / "raw"
    specs = []
    total = 0
    for i, s in enumerate(cfg["synth"]["sets"]):
        offset = s["seed_offset"] if s["seed_offset"] is not None else i
        seed = cfg["seed"] * 1000 + offset
        speed = s["speed_mps"] if s["speed_mps"] is not None else _DEFAULT_SPEEDS[s["movement"]]
        specs.append(
            SynthSpec(
                seed=seed,
                n_trials=s["count"],
                movement=MovementClass[s["movement"].upper()],
                speed_mps=speed,
                stance_ms=s["stance_ms"],
                noise_std_mps2=s["noise_std_mps2"],
                source_kind=SourceKind(s["source"]),
                mount_rotation=_mount_rotations(s["mount_rotation_deg"], seed),
            )
        )
        total += s["count"]
    generate_corpus(specs, raw)
    return {"raw_dir": str(raw), "n_trials": total, "corpus": str(raw / "corpus.csv")}


# --------------------------------------------------------------------------
# prepare

def _iter_raw_trials(raw: Path):
    corpus = raw / "corpus.csv"
    if not corpus.exists():
        raise MissingFile(f"no corpus index at {corpus}; run synth first")
    lines = corpus.read_text().strip().splitlines()
    for line in lines[1:]:
        rel = line.split(",")[-1]
        yield parse_trial(raw / rel)


def _split_of(trial: TrialRecord, mode: str, test_fraction: float) -> str:
    if mode == "source":
        return "train" if trial.source_kind is SourceKind.MARKERS else "test"
    digest = hashlib.sha256(trial.trial_id.encode()).hexdigest()
    return "test" if int(digest[:8], 16) / 16 ** 8 < test_fraction else "train"


def stage_prepare(cfg: dict, root: Path) -> dict:
    """Raw trials -> encoded train/test samples plus the output PCA.

    Per trial: quality gate, stance window and limb from the force plate,
    movement classification, subset filters, left-to-right mirroring when
    pooling limbs, virtual-sensor conversion for marker capture, axis
    alignment, image encoding and target extraction. The output PCA is fit
    on training targets only.
    """
    p = cfg["prepare"]
    g = cfg["gait"]
    raw = root / "raw"
    out = root / "prepared" / cfg["report"]["experiment"]
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(parents=True, exist_ok=True)

    rejects = {}
    accepted = []
    for trial in _iter_raw_trials(raw):
        gated = quality_gate(
            trial,
            max_gap_frames=p["max_gap_frames"],
            contact_threshold_n=g["threshold_n"],
        )
        if not isinstance(gated, TrialRecord):
            rejects[trial.trial_id] = f"{gated.code}: {gated.detail}"
            continue
        accepted.append(gated)
    accepted = dedupe(accepted)

    imu_cfg = VirtualImuConfig(
        output_hz=p["output_hz"],
        include_gravity=p["include_gravity"],
        lowpass_hz=p["lowpass_hz"],
    )
    mode = AlignmentMode(p["alignment"])
    want_movement = p["movement"]
    want_limb = p["stance_limb"]

    split_ids = {"train": [], "test": []}
    targets_by_split = {"train": [], "test": []}
    samples_by_split = {"train": [], "test": []}
    classified = {}

    for trial in accepted:
        try:
            window = detect_stance_events(
                trial.force, g["threshold_n"], g["min_contact_frames"]
            )
        except NoContact as exc:
            rejects[trial.trial_id] = f"no_contact: {exc}"
            continue
        # Limb detection wants acceleration energies, classification wants
        # the raw pelvis trajectory, so convert marker capture to virtual
        # sensors first but classify on the unconverted trial.
        imu = trial
        if any(t.kind is TrackKind.POSITION for t in trial.sensors):
            imu = virtual_imu_trial(trial, imu_cfg)
        window.stance_limb = detect_stance_limb(imu, window)
        movement = classify_movement(
            trial,
            window,
            strict_bins=p["strict_bins"],
            sidestep_angle_deg=g["sidestep_angle_deg"],
        )
        classified[trial.trial_id] = movement.value
        if movement is MovementClass.OTHER:
            rejects[trial.trial_id] = "classified_other: excluded from experiments"
            continue
        if want_movement != "all" and movement is not MovementClass[want_movement.upper()]:
            continue
        if want_limb == "left" and window.stance_limb is not Limb.LEFT:
            continue
        if want_limb == "right" and window.stance_limb is not Limb.RIGHT:
            continue
        if want_limb == "combined" and window.stance_limb is Limb.LEFT:
            imu, window = mirror_left_to_right(imu, window)

        aligned = align_trial(imu, mode)
        # Optional lead-in context widens the image window only; targets
        # always come from the exact stance span.
        img_window = window
        if g["lead_fraction"] > 0:
            lead = g["lead_fraction"] * (window.to_frame - window.fs_frame)
            img_window = replace(
                window, fs_frame=max(int(math.floor(window.fs_frame - lead)), 0)
            )
        image, scaling = encode_image(
            aligned,
            img_window,
            size=p["image_size"],
            n_points=g["n_points"],
            fixed_range_mps2=(
                p["encode_range_mps2"] if p["encode_mode"] == "fixed" else None
            ),
            time_up=p["time_up"],
        )
        target = build_target(aligned.force, window, aligned.subject, g["n_points"])
        sample = EncodedSample(
            trial_id=aligned.trial_id,
            image=image,
            target=target,
            scaling=scaling,
            movement=movement.value,
            stance_limb=window.stance_limb.value,
            mirrored=aligned.mirrored,
            mass_kg=aligned.subject.mass_kg,
            height_m=aligned.subject.height_m,
        )
        split = _split_of(aligned, p["split"], p["test_fraction"])
        split_ids[split].append(trial.trial_id)
        targets_by_split[split].append(target)
        samples_by_split[split].append(sample)

    if not split_ids["train"]:
        raise EmptySubset(
            f"no training trials left after filtering "
            f"(movement={want_movement}, stance_limb={want_limb})"
        )

    pca = fit_output_pca(
        np.array(targets_by_split["train"]),
        variance_keep=p["variance_keep"],
        k_cap=p["k_cap"],
    )
    save_output_pca(pca, out)

    files = {}
    for split in ("train", "test"):
        for sample in samples_by_split[split]:
            png = save_sample(sample, out / split)
            files[str(png.relative_to(out))] = _file_sha256(png)
        split_ids[split].sort()

    _write_manifest(out / "prepare_manifest.json", {
        "experiment": cfg["report"]["experiment"],
        "config": {"prepare": p, "gait": g},
        "seed": cfg["seed"],
        "n_train": len(split_ids["train"]),
        "n_test": len(split_ids["test"]),
        "train_ids": split_ids["train"],
        "test_ids": split_ids["test"],
        "rejects": rejects,
        "classified": classified,
        "pca_k": pca.k,
        "pca_checksum": pca.checksum(),
        "image_size": p["image_size"],
        "files": files,
    })
    return {
        "prepared_dir": str(out),
        "n_train": len(split_ids["train"]),
        "n_test": len(split_ids["test"]),
        "n_rejected": len(rejects),
        "pca_k": pca.k,
    }


def _load_split(prepared: Path, split: str) -> list[EncodedSample]:
    with open(prepared / "prepare_manifest.json") as fh:
        manifest = json.load(fh)
    return [load_sample(prepared / split, tid) for tid in manifest[f"{split}_ids"]]


# --------------------------------------------------------------------------
# train

def stage_train(cfg: dict, root: Path) -> dict:
    experiment = cfg["report"]["experiment"]
    prepared = root / "prepared" / experiment
    out = root / "model" / experiment
    t = cfg["train"]

    samples = _load_split(prepared, "train")
    if not samples:
        raise EmptySubset("prepared dataset has no training samples")
    pca = load_output_pca(prepared)
    images = np.stack([s.image for s in samples])
    coeffs = np.stack([project_target(pca, s.target) for s in samples])

    spec = NetworkSpec(input_size=images.shape[1], k_outputs=pca.k)
    parent = None
    if t["warm_start"]:
        parent = load_model(Path(t["warm_start"]))
    bundle = init_network(spec, seed=cfg["seed"], parent=parent)
    bundle = train(
        bundle,
        images,
        coeffs,
        TrainConfig(
            lr=t["lr"],
            momentum=t["momentum"],
            batch_size=t["batch_size"],
            epochs=t["epochs"],
            val_fraction=t["val_fraction"],
            seed=cfg["seed"],
            shuffle=t["shuffle"],
        ),
    )
    bundle.pca_checksum = pca.checksum()
    save_model(bundle, out)
    last = bundle.history[-1] if bundle.history else {}
    return {
        "model_dir": str(out),
        "n_train": len(samples),
        "k_outputs": pca.k,
        "epochs_run": len(bundle.history),
        "final_train_loss": last.get("train_loss"),
        "final_val_loss": last.get("val_loss"),
    }


# --------------------------------------------------------------------------
# predict

def _write_waveforms_csv(path: Path, waves: dict) -> None:
    n = len(next(iter(waves.values())))
    lines = ["point," + ",".join(CHANNELS)]
    for i in range(n):
        lines.append(
            f"{i}," + ",".join(repr(float(waves[ch][i])) for ch in CHANNELS)
        )
    path.write_text("\n".join(lines) + "\n")


def _read_waveforms_csv(path: Path) -> dict:
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    if header != ["point"] + list(CHANNELS):
        raise IngestError(f"{path}: unexpected waveform header {header}")
    rows = np.array([[float(v) for v in ln.split(",")[1:]] for ln in lines[1:]])
    return {ch: rows[:, i] for i, ch in enumerate(CHANNELS)}


def stage_predict(cfg: dict, root: Path) -> dict:
    experiment = cfg["report"]["experiment"]
    prepared = root / "prepared" / experiment
    model_dir = root / "model" / experiment
    out = root / "predictions" / experiment
    out.mkdir(parents=True, exist_ok=True)

    bundle = load_model(model_dir)
    pca = load_output_pca(prepared)
    samples = _load_split(prepared, "test")
    if not samples:
        raise EmptySubset("prepared dataset has no test samples")

    ids = []
    for sample in samples:
        subject = SubjectMeta(mass_kg=sample.mass_kg, height_m=sample.height_m)
        waves = predict_waveforms(bundle, pca, sample.image, subject)
        _write_waveforms_csv(out / f"pred_{sample.trial_id}.csv", waves)
        ids.append(sample.trial_id)
    _write_manifest(out / "predictions_manifest.json", {
        "experiment": experiment,
        "model_checksum": bundle.checksum(),
        "pca_checksum": pca.checksum(),
        "trial_ids": ids,
    })
    return {"predictions_dir": str(out), "n_predicted": len(ids)}


# --------------------------------------------------------------------------
# evaluate / report

def _reference_waveforms(sample: EncodedSample) -> dict:
    """De-normalize a sample's stored target back to newtons and
    newton-metres for comparison with predictions."""
    wave = split_target(sample.target).copy()
    bw = sample.mass_kg * GRAVITY_MPS2
    wave[:, :3] *= bw
    wave[:, 3:] *= bw * sample.height_m
    return {ch: wave[:, i].copy() for i, ch in enumerate(CHANNELS)}


def _gather_eval_inputs(cfg: dict, root: Path):
    experiment = cfg["report"]["experiment"]
    prepared = root / "prepared" / experiment
    pred_dir = root / "predictions" / experiment
    with open(prepared / "prepare_manifest.json") as fh:
        prep_manifest = json.load(fh)
    with open(pred_dir / "predictions_manifest.json") as fh:
        pred_manifest = json.load(fh)

    predictions = {ch: [] for ch in CHANNELS}
    references = {ch: [] for ch in CHANNELS}
    for tid in pred_manifest["trial_ids"]:
        sample = load_sample(prepared / "test", tid)
        ref = _reference_waveforms(sample)
        pred = _read_waveforms_csv(pred_dir / f"pred_{tid}.csv")
        for ch in CHANNELS:
            predictions[ch].append(pred[ch])
            references[ch].append(ref[ch])
    if not pred_manifest["trial_ids"]:
        raise EmptySubset("no predictions to evaluate")

    report = build_report(
        predictions,
        references,
        experiment=experiment,
        movement=prep_manifest["config"]["prepare"]["movement"],
        stance_limb=prep_manifest["config"]["prepare"]["stance_limb"],
        capture=_CAPTURE_NAMES[prep_manifest["config"]["prepare"]["alignment"]],
        n_train=prep_manifest["n_train"],
        n_test=prep_manifest["n_test"],
    )
    return report, predictions, references


def stage_evaluate(cfg: dict, root: Path) -> dict:
    report, predictions, references = _gather_eval_inputs(cfg, root)
    out = root / "eval" / cfg["report"]["experiment"]
    emit_report(report, out, predictions, references, svg=False)
    summary = {"eval_dir": str(out), "n_test": report.n_test}
    for ch in CHANNELS:
        summary[f"r_{ch}"] = report.channels[ch].r
    summary["f_mean_r"] = report.f_mean_r
    summary["m_mean_r"] = report.m_mean_r
    return summary


def stage_report(cfg: dict, root: Path) -> dict:
    """Same tables as evaluate plus the optional SVG figure sheet."""
    report, predictions, references = _gather_eval_inputs(cfg, root)
    out = root / "eval" / cfg["report"]["experiment"]
    emit_report(report, out, predictions, references, svg=cfg["report"]["svg"])
    return {
        "eval_dir": str(out),
        "report_csv": str(out / "report.csv"),
        "svg": str(out / "report.svg") if cfg["report"]["svg"] else None,
    }
