"""Command-line entry point: ``python -m latent_triplanes <command> [flags]``.

Exit codes: 0 ok, 2 configuration error, 3 missing prerequisite,
4 non-finite loss, 5 prerequisite produced by an incompatible configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .checkpoint import CheckpointError
from .config import MODES, ConfigError, load_config
from .costs_metrics import table1_csv
from .training import NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NAN, EXIT_ORDER = 0, 2, 3, 4, 5

COMMANDS = ("dataset", "pretrain-ae", "train", "exploit", "eval", "table1", "render")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--out", default="runs/default", metavar="DIR", help="run directory (default: %(default)s)")
    common.add_argument("--mode", choices=MODES, help="pipeline variant")
    common.add_argument("--deterministic", action="store_true", default=None, help="omit wall-clock data from outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="latent_triplanes", description="Multi-scene tri-plane fitting in a learned latent space.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("dataset", parents=[common], help="generate train and exploit datasets")
    sub.add_parser("pretrain-ae", parents=[common], help="pretrain the autoencoder")
    sub.add_parser("train", parents=[common], help="warmup followed by joint training")
    sub.add_parser("exploit", parents=[common], help="learn new scenes and finetune the decoder")
    sub.add_parser("eval", parents=[common], help="test-view PSNR per scene group")
    sub.add_parser("table1", parents=[common], help="print the cost-table reproduction")
    render = sub.add_parser("render", parents=[common], help="export renders of one scene")
    render.add_argument("--scene", type=int, required=True)
    render.add_argument("--poses", default="0", help="comma-separated pose indices")
    render.add_argument("--group", choices=("train", "exploit"), default="exploit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "table1":
            sys.stdout.write(table1_csv())
            return EXIT_OK
        cfg = load_config(args.config, {"seed": args.seed, "mode": args.mode, "deterministic": args.deterministic})
        if args.command == "dataset":
            result = pipeline.stage_dataset(cfg, args.out)
        elif args.command == "pretrain-ae":
            result = pipeline.stage_pretrain_ae(cfg, args.out)
        elif args.command == "train":
            result = pipeline.stage_train(cfg, args.out)
        elif args.command == "exploit":
            result = pipeline.stage_exploit(cfg, args.out)
        elif args.command == "eval":
            result = pipeline.stage_eval(cfg, args.out)
        else:
            poses = [int(p) for p in args.poses.split(",") if p.strip()]
            result = [str(p) for p in pipeline.stage_render(cfg, args.out, args.scene, poses, args.group)]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.MissingPrerequisite, CheckpointError) as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except pipeline.StageOrderError as exc:
        print(f"stage order: {exc}", file=sys.stderr)
        return EXIT_ORDER
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NAN
    print(json.dumps(result, indent=1, default=str))
    return EXIT_OK
