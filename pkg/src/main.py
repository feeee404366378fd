#!/usr/bin/env python3
"""
Block-ADMM Toolkit CLI

Subcommands:
  train        run the configured method; writes metrics.csv, model.ckpt, config.env
  eval         accuracy of a checkpoint on the configured data
  nmf-project  non-negative scores of a DeepFacto checkpoint as scores.csv
  gen-synth    write the configured synthetic dataset as .npz files
  bench        run several methods (optionally over several seeds) on one config

Exit codes: 0 success, 1 usage/config, 2 data/checkpoint, 3 numeric failure,
4 unexpected error.
"""

import argparse
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

from modules.data.config import load_config
from modules.errors import ConfigError, exit_code_for
from runner import ExperimentRunner

OUTPUT_PATH_ENV = "BLOCKADMM_OUTPUT_PATH"
DEFAULT_OUTPUT_PATH = "runs"


class CliParser(argparse.ArgumentParser):
    """Usage errors become ConfigError (exit 1) instead of SystemExit(2)."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value run configuration file")
    common.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_PATH_ENV})")
    common.add_argument("--seed", type=int, help="override the configured seed")

    parser = CliParser(prog="blockadmm", description="Block-ADMM training toolkit")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    commands.add_parser("train", parents=[common], help="train the configured method")
    for name, text in (
        ("eval", "evaluate a checkpoint"),
        ("nmf-project", "export NMF scores of a checkpoint"),
    ):
        sub = commands.add_parser(name, parents=[common], help=text)
        sub.add_argument("--checkpoint", type=Path, required=True, help="model.ckpt path")
    commands.add_parser("gen-synth", parents=[common], help="generate a synthetic dataset")
    bench = commands.add_parser("bench", parents=[common], help="compare several methods")
    bench.add_argument("--repeats", type=int, default=1, help="seeds per method")
    return parser


def cli_main(argv: list[str] | None = None) -> int:
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
        config = load_config(args.config, {"seed": args.seed})
        out_dir = args.out or Path(os.getenv(OUTPUT_PATH_ENV, DEFAULT_OUTPUT_PATH))

        print("=" * 50)
        print(f"🔄 Block-ADMM toolkit: {args.command}")
        print(f"✅ Output directory: {out_dir}")
        print("=" * 50 + "\n")

        runner = ExperimentRunner(config, out_dir)
        if args.command == "train":
            runner.train()
        elif args.command == "eval":
            runner.evaluate(args.checkpoint)
        elif args.command == "nmf-project":
            runner.nmf_project(args.checkpoint)
        elif args.command == "gen-synth":
            runner.gen_synth()
        else:
            runner.bench(args.repeats)
    except Exception as e:
        print(f"❌ Error: {e}")
        return exit_code_for(e)
    return 0


if __name__ == "__main__":
    sys.exit(cli_main())
