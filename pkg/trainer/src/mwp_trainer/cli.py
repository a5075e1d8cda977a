"""Trainer command line: fit a student on a knowledge set, or batch-generate.

Exit codes: 0 success, 2 bad config, 3 bad data, 4 vocabulary mismatch.
The controller process contract invokes this executable with bare
``--train-set/--config/--out`` flags; that form is accepted as ``train``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .data import DataError
from .generation import generate_samples
from .losses import VocabularyMismatch
from .training import ConfigError, TrainingConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VOCAB = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mwp-trainer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune on a knowledge-set JSONL")
    p.add_argument("--train-set", required=True)
    p.add_argument("--config", required=True, help="training-config JSON")
    p.add_argument("--out", required=True, help="checkpoint directory")

    p = sub.add_parser("generate", help="batch-generate a sample JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--decode", choices=("greedy", "temperature"), default="temperature")
    p.add_argument("--temperature", type=float, default=0.6)
    p.add_argument("--num-samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-new-tokens", type=int, default=256)

    return parser


def cmd_train(args) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        print(f"error: config not found: {config_path}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = TrainingConfig.from_dict(raw)
        manifest = train(args.train_set, config, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VocabularyMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VOCAB
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(
        f"trained {manifest['steps']} steps, final loss {manifest['final_train_loss']:.4f}, "
        f"checkpoint {manifest['checkpoint_path']}"
    )
    return EXIT_OK


def cmd_generate(args) -> int:
    if not Path(args.checkpoint).exists():
        print(f"error: checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        generate_samples(
            args.checkpoint,
            args.dataset,
            args.out,
            greedy=args.decode == "greedy",
            temperature=args.temperature,
            num_samples=args.num_samples,
            seed=args.seed,
            max_new_tokens=args.max_new_tokens,
        )
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if argv is None:
        argv = sys.argv[1:]
    argv = list(argv)
    if argv and argv[0].startswith("--") and "--train-set" in argv:
        argv = ["train", *argv]  # controller invokes with bare flags
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit:
        return EXIT_CONFIG
    if args.command == "train":
        return cmd_train(args)
    return cmd_generate(args)


if __name__ == "__main__":
    sys.exit(main())
