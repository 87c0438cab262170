"""Ground-kinetics estimation from wearable accelerations.

Synthesizes or ingests five-sensor lower-body motion trials, encodes the
stance-phase accelerations as small RGB images, and regresses PCA-reduced
ground reaction force and moment waveforms with a compact convolutional
network. Submodules: ingest, simulate, align, gait, encode, model, metrics,
config, pipeline, cli.

Attribute access is lazy (the CLI pins thread pools before the numerical
stack loads), so ``import accel2grf`` alone pulls in no heavy modules.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # ingest
    "Location": "ingest", "TrackKind": "ingest", "SourceKind": "ingest",
    "SubjectMeta": "ingest", "SensorTrack": "ingest", "ForceTrack": "ingest",
    "TrialRecord": "ingest", "RejectReason": "ingest", "parse_trial": "ingest",
    "write_trial": "ingest", "resample_uniform": "ingest",
    "quality_gate": "ingest", "dedupe": "ingest", "trial_content_hash": "ingest",
    # simulate
    "VirtualImuConfig": "simulate", "double_differentiate": "simulate",
    "virtual_imu_trial": "simulate", "SynthSpec": "simulate",
    "generate_synthetic_trial": "simulate", "generate_corpus": "simulate",
    # align
    "AlignmentMode": "align", "euclidean_norm_align": "align",
    "pca_rotation_matrix": "align", "align_track": "align", "align_trial": "align",
    # gait
    "Limb": "gait", "MovementClass": "gait", "StanceWindow": "gait",
    "detect_stance_events": "gait", "detect_stance_limb": "gait",
    "classify_movement": "gait", "normalize_stance": "gait",
    "trim_lead_in": "gait", "mirror_left_to_right": "gait",
    # encode
    "EncodedSample": "encode", "encode_grid": "encode",
    "decode_image_grid": "encode", "encode_image": "encode",
    "build_target": "encode", "split_target": "encode",
    "OutputPcaModel": "encode", "fit_output_pca": "encode",
    "project_target": "encode", "reconstruct_target": "encode",
    "save_output_pca": "encode", "load_output_pca": "encode",
    "save_sample": "encode", "load_sample": "encode",
    # model
    "NetworkSpec": "model", "TrainConfig": "model", "WeightBundle": "model",
    "init_network": "model", "forward": "model", "euclidean_loss": "model",
    "train": "model", "grad_check": "model", "predict_waveforms": "model",
    "save_model": "model", "load_model": "model",
    # metrics
    "pearson_r": "metrics", "rrmse_percent": "metrics", "bland_altman": "metrics",
    "BlandAltman": "metrics", "ChannelStats": "metrics", "EvalReport": "metrics",
    "build_report": "metrics", "emit_report": "metrics",
    # config
    "load_config": "config", "validate_config": "config",
    # errors (module import is cheap, but keep access uniform)
    "PipelineError": "errors", "IngestError": "errors", "ConfigError": "errors",
    "EmptySubset": "errors", "ChecksumMismatch": "errors",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    return getattr(importlib.import_module(f".{module}", __name__), name)


def __dir__():
    return __all__
