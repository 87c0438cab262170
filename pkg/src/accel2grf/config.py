"""Pipeline configuration: JSON file, schema-validated, defaults applied.

Unknown keys are rejected (additionalProperties: false) so a typo fails
loudly instead of silently running defaults. Validation failures raise
ConfigError carrying the offending JSON path.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

_SYNTH_SET = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "movement": {
            "enum": ["run_slow", "run_moderate", "run_fast",
                     "run_accel", "run_decel", "sidestep"],
        },
        "count": {"type": "integer", "minimum": 1},
        "speed_mps": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "stance_ms": {"type": "number", "minimum": 120, "maximum": 500},
        "source": {"enum": ["markers", "accelerometers"]},
        "noise_std_mps2": {"type": "number", "minimum": 0},
        "mount_rotation_deg": {"type": "number", "minimum": 0},
        "seed_offset": {"type": ["integer", "null"], "minimum": 0},
    },
    "required": ["movement", "count"],
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "data_root": {"type": ["string", "null"]},
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"sets": {"type": "array", "items": _SYNTH_SET, "minItems": 1}},
        },
        "prepare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alignment": {"enum": ["norm", "pca"]},
                "movement": {
                    "enum": ["all", "run_slow", "run_moderate", "run_fast",
                             "run_accel", "run_decel", "sidestep"],
                },
                "stance_limb": {"enum": ["left", "right", "combined"]},
                "image_size": {"type": "integer", "minimum": 4},
                "encode_mode": {"enum": ["per_image", "fixed"]},
                "encode_range_mps2": {"type": "number", "exclusiveMinimum": 0},
                "time_up": {"type": "boolean"},
                "variance_keep": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "k_cap": {"type": "integer", "minimum": 1},
                "split": {"enum": ["source", "hash"]},
                "test_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "include_gravity": {"type": "boolean"},
                "lowpass_hz": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "output_hz": {"type": "number", "exclusiveMinimum": 0},
                "strict_bins": {"type": "boolean"},
                "max_gap_frames": {"type": "integer", "minimum": 0},
            },
        },
        "gait": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "threshold_n": {"type": "number", "exclusiveMinimum": 0},
                "min_contact_frames": {"type": "integer", "minimum": 1},
                "n_points": {"type": "integer", "minimum": 2},
                "sidestep_angle_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 180},
                "lead_fraction": {"type": "number", "minimum": 0},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 0},
                "val_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "shuffle": {"type": "boolean"},
                "warm_start": {"type": ["string", "null"]},
            },
        },
        "report": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "experiment": {"type": "string", "minLength": 1},
                "svg": {"type": "boolean"},
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "data_root": None,
    "synth": {
        "sets": [
            {"movement": "run_slow", "count": 10, "speed_mps": None,
             "stance_ms": 250.0, "source": "markers", "noise_std_mps2": 0.0,
             "mount_rotation_deg": 0.0, "seed_offset": None},
        ],
    },
    "prepare": {
        "alignment": "pca",
        "movement": "all",
        "stance_limb": "combined",
        "image_size": 64,
        "encode_mode": "fixed",
        "encode_range_mps2": 60.0,
        "time_up": True,
        "variance_keep": 0.995,
        "k_cap": 64,
        "split": "source",
        "test_fraction": 0.2,
        "include_gravity": True,
        "lowpass_hz": None,
        "output_hz": 250.0,
        "strict_bins": False,
        "max_gap_frames": 10,
    },
    "gait": {
        "threshold_n": 20.0,
        "min_contact_frames": 10,
        "n_points": 101,
        "sidestep_angle_deg": 30.0,
        "lead_fraction": 0.0,
    },
    "train": {
        "lr": 1e-3,
        "momentum": 0.9,
        "batch_size": 16,
        "epochs": 20,
        "val_fraction": 0.1,
        "shuffle": True,
        "warm_start": None,
    },
    "report": {
        "experiment": "default",
        "svg": False,
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(obj: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(obj), key=lambda e: e.json_path)
    if errors:
        first = errors[0]
        raise ConfigError(f"{first.json_path}: {first.message}")


def load_config(path: str | Path | None) -> dict:
    """Read a JSON config, validate it, and fill unset keys with defaults.
    path=None yields the pure defaults. Synth sets also get per-set
    defaults so downstream code never guards missing keys."""
    if path is None:
        user = {}
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            with open(p) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
    validate_config(user)
    cfg = _merge(DEFAULTS, user)
    if "sets" in user.get("synth", {}):
        cfg["synth"]["sets"] = [
            _merge(
                {"speed_mps": None, "stance_ms": 250.0, "source": "markers",
                 "noise_std_mps2": 0.0, "mount_rotation_deg": 0.0,
                 "seed_offset": None},
                s,
            )
            for s in user["synth"]["sets"]
        ]
    validate_config(cfg)
    return cfg
