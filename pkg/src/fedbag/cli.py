"""Command-line entry point ``fedbag``.

    fedbag run --config exp.json [--scenario S ...] [--alpha A ...] [--seed N] [--task T] --out DIR
    fedbag synth --spec synth.json --out DIR
    fedbag attention --checkpoint model.fbag --manifest manifest.csv --out attention.csv

Exit status: 0 on success, 2 for configuration errors, 1 for runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, validate_config
from .data import SPLITS, SynthSpec, generate_synthetic, load_dataset, write_dataset
from .experiment import export_attention, run
from .serialization import load_checkpoint

logger = logging.getLogger("fedbag")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedbag", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario sweep")
    r.add_argument("--config", required=True)
    r.add_argument("--scenario", action="append", help="repeatable; overrides the config's scenarios")
    r.add_argument("--alpha", action="append", type=float, help="repeatable; overrides the config's alphas")
    r.add_argument("--seed", type=int)
    r.add_argument("--task", choices=["classification", "survival"])
    r.add_argument("--out")

    s = sub.add_parser("synth", help="write a synthetic cohort as bag files + manifest")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)

    a = sub.add_parser("attention", help="export per-instance attention scores")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--manifest", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--split", choices=list(SPLITS) + ["all"], default="all")
    return p


def _cmd_run(args) -> int:
    overrides = {"scenarios": args.scenario, "alphas": args.alpha, "seed": args.seed,
                 "task": args.task, "out": args.out}
    config = validate_config(args.config, overrides)
    if config.out is None:
        raise ConfigError(["out: no output directory (set it in the config or pass --out)"])
    run(config)
    logger.info("wrote results to %s", config.out)
    return EXIT_OK


def _cmd_synth(args) -> int:
    try:
        raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{args.spec}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"])
    try:
        spec = SynthSpec.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"{args.spec}: {exc}"])
    path = write_dataset(generate_synthetic(spec), args.out)
    logger.info("wrote %s", path)
    return EXIT_OK


def _cmd_attention(args) -> int:
    weights, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.manifest)
    splits = SPLITS if args.split == "all" else (args.split,)
    bags = [b for sid in dataset.site_ids for split in splits for b in getattr(dataset.sites[sid], split)]
    n = export_attention(weights, bags, args.out)
    logger.info("wrote %d attention rows to %s", n, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    handler = {"run": _cmd_run, "synth": _cmd_synth, "attention": _cmd_attention}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"fedbag: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        logger.debug("failure", exc_info=True)
        print(f"fedbag: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
