#!/usr/bin/env python3
"""
run_pvlab.py - pvlab
CLI runner for pseudo-video construction and the reconstruction-error checks.

Usage:
    # Turn a directory of PGM/PPM images into 8-frame blur pseudo videos
    python scripts/run_pvlab.py augment --input data/images --out out/augment

    # Exact L* along nested contexts (Gaussian and discrete oracles)
    python scripts/run_pvlab.py oracle --config my_config.json --out out/oracle

    # OLS / MLP fits at two context sizes against the oracle
    python scripts/run_pvlab.py fit --out out/fit --seed 7

    # Autoregressive generation with oracle or fitted step predictors
    python scripts/run_pvlab.py generate --out out/generate

    # The full five-item check suite (PASS/FAIL table on standard output)
    python scripts/run_pvlab.py verify --out out/verify --threads 4

Exit codes:
    0 success, 1 assertion failure, 2 configuration or argument error,
    3 I/O or format error

Environment:
    PVLAB_THREADS   - worker threads when --threads is not given (default 1)
"""

import argparse
import logging
import os
import sys
from pathlib import Path

# Add project root to path
ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from scripts.pvlab import __version__
from scripts.pvlab.commands import COMMANDS
from scripts.pvlab.config import ExperimentConfig, canonical_json, load_config
from scripts.pvlab.errors import (
    ConfigError,
    FormatError,
    PVLabError,
    ResourceError,
    TrainingError,
)
from scripts.pvlab.manifest import RunManifest

logger = logging.getLogger("pvlab.runner")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s - %(message)s"


def setup_logging(out_dir: Path, verbose: bool = False):
    level = logging.DEBUG if verbose else logging.INFO
    out_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=level,
        format=LOG_FORMAT,
        handlers=[
            logging.StreamHandler(sys.stderr),
            logging.FileHandler(str(out_dir / "run.log"), encoding="utf-8"),
        ],
        force=True,
    )


def resolve_threads(value: int | None) -> int:
    """--threads, then PVLAB_THREADS, then 1."""
    if value is None:
        raw = os.environ.get("PVLAB_THREADS", "1")
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"PVLAB_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"thread count must be >= 1, got {value}")
    return value


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, TrainingError):
        return EXIT_ASSERT
    if isinstance(exc, (FormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, (PVLabError, ValueError)):
        return EXIT_CONFIG
    raise exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config",  default=None, help="JSON config merged over data/default_config.json")
    common.add_argument("--out",     default="out", help="Output directory (default: out)")
    common.add_argument("--seed",    type=int, default=None, help="Override the config seed")
    common.add_argument("--threads", type=int, default=None, help="Worker threads (env PVLAB_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        description=f"pvlab {__version__} - pseudo videos and last-frame reconstruction error",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    aug_p = sub.add_parser("augment", parents=[common], help="Build .pvid pseudo videos from images")
    aug_p.add_argument("--input",  default=None, help="Image directory (overrides augment.input_dir)")
    aug_p.add_argument("--family", default=None,
                       choices=["blur", "heat", "noise-first-order", "noise-high-order"])

    sub.add_parser("oracle",   parents=[common], help="Exact L* along nested contexts")
    sub.add_parser("fit",      parents=[common], help="Empirical predictors at two context sizes")
    sub.add_parser("generate", parents=[common], help="Autoregressive generation of whole chains")
    sub.add_parser("verify",   parents=[common], help="Five-item check suite")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config, args.seed)
    overrides = {}
    if getattr(args, "input", None):
        overrides["input_dir"] = args.input
    if getattr(args, "family", None):
        overrides["family"] = args.family
    if overrides:
        doc = dict(config.resolved)
        doc["augment"] = {**doc["augment"], **overrides}
        config = ExperimentConfig.from_dict(doc)
    return config


def run(args) -> int:
    out_dir = Path(args.out)
    config = _load(args)
    threads = resolve_threads(args.threads)

    (out_dir / "config.json").write_text(canonical_json(config.resolved), encoding="utf-8")
    manifest = RunManifest.start(args.command, config.resolved, __version__)
    logger.info("pvlab %s %s: seed %d, %d threads, output %s",
                __version__, args.command, config.seed, threads, out_dir)

    result = COMMANDS[args.command](config, out_dir, threads)
    if result.summary:
        sys.stdout.write(result.summary)
        sys.stdout.flush()
    manifest.finish(out_dir, result.exit_code)
    return result.exit_code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG

    setup_logging(Path(args.out), args.verbose)
    try:
        return run(args)
    except ResourceError as e:
        logger.error("Resource limit: %s", e)
        return EXIT_CONFIG
    except (PVLabError, ValueError, OSError) as e:
        code = exit_code_for(e)
        logger.error("%s failed (exit %d): %s", args.command, code, e)
        return code


if __name__ == "__main__":
    sys.exit(main())
