"""Command line entry point.

Subcommands mirror the pipeline stages: synth, prepare, train, predict,
evaluate, report. Each takes --config (JSON), --seed (overrides the config
seed), --out (data root, otherwise config data_root, then
$ACCEL2GRF_DATA_ROOT, then ./data) and --threads (caps BLAS thread pools).

Exit codes: 0 success, 1 other pipeline failure, 2 configuration or usage
error, 3 missing or malformed input, 4 empty subset after filtering,
5 checksum mismatch between persisted artifacts.

Heavy imports happen inside main() so --threads can pin the thread pools
before the numerical libraries initialize them.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_EMPTY = 4
EXIT_CHECKSUM = 5

_STAGES = ("synth", "prepare", "train", "predict", "evaluate", "report")

_STAGE_HELP = {
    "synth": "generate a synthetic raw corpus under <root>/raw",
    "prepare": "encode raw trials into train/test samples and fit the output PCA",
    "train": "fit the regression network on the prepared training split",
    "predict": "write per-trial predicted stance waveforms for the test split",
    "evaluate": "score predictions against references and write report.csv",
    "report": "evaluate plus the figure sheet (SVG when enabled in config)",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", default=None,
                        help="JSON config; unset keys use defaults")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--out", metavar="DIR", default=None,
                        help="data root (default: config, $ACCEL2GRF_DATA_ROOT, ./data)")
    common.add_argument("--threads", type=int, default=None,
                        help="cap numerical thread pools")
    parser = argparse.ArgumentParser(
        prog="accel2grf",
        description="Wearable-acceleration to ground-kinetics pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="STAGE")
    for name in _STAGES:
        sub.add_parser(name, parents=[common], help=_STAGE_HELP[name])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from . import pipeline
    from .config import load_config
    from .errors import (
        ChecksumMismatch,
        ConfigError,
        EmptySubset,
        IngestError,
        PipelineError,
    )

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be >= 0")
            cfg["seed"] = args.seed
        root = pipeline.resolve_root(args.out, cfg)
        stage_fn = getattr(pipeline, f"stage_{args.command}")
        summary = stage_fn(cfg, root)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EmptySubset as exc:
        print(f"empty subset: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except ChecksumMismatch as exc:
        print(f"checksum mismatch: {exc}", file=sys.stderr)
        return EXIT_CHECKSUM
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL

    json.dump(summary, sys.stdout, indent=1, sort_keys=True)
    print()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
