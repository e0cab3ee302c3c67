# -*- coding:UTF-8 -*-
import sys
from argparse import ArgumentParser

from src.cli import COMMANDS, dispatch, setup_logging


def main(args):
    setup_logging(args.log_level)
    return dispatch(args.command, args.config, out=args.out, workers=args.workers,
                    seed=args.seed, log_level=args.log_level)


if __name__ == "__main__":
    parser = ArgumentParser(description="energy localization lab for blow-up boundary regimes")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=str, nargs="+", required=True,
                        help="one or more scenario config files")
    parser.add_argument("--out", type=str, default=None,
                        help="output directory (per-scenario subdirectories when several configs are given)")
    parser.add_argument("--workers", type=int, default=1, help="scenarios run concurrently")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--log-level", dest="log_level", type=str, default="INFO")

    args = parser.parse_args()
    sys.exit(main(args))
