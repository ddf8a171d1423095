"""Command line entry point: ``cfgnn {train,eval,baseline,gen-drops,selftest}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import harness
from .selftest import run_selftest


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfgnn", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value config file (defaults: full scale)")
    common.add_argument("--desk", action="store_true",
                        help="start from the desk-scale preset instead of full scale")
    common.add_argument("--seed", type=int, help="override experiment.seed")
    common.add_argument("--out", help="override experiment.output_dir")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train one model per network size")
    sub.add_parser("eval", parents=[common], help="evaluate checkpoints against baselines")
    sub.add_parser("baseline", parents=[common], help="evaluate TDM and WMMSE only")
    gen = sub.add_parser("gen-drops", parents=[common], help="write random drops to text files")
    gen.add_argument("--m", type=int, required=True, help="number of transmitter-receiver pairs")
    gen.add_argument("--count", type=int, default=1)
    st = sub.add_parser("selftest", parents=[common], help="run fast invariant checks")
    st.add_argument("--repeats", type=int, default=5)
    return parser


def _config(args) -> harness.ExperimentConfig:
    base = harness.desk_config() if args.desk else harness.ExperimentConfig()
    if args.config:
        with open(args.config) as fh:
            cfg = harness.parse_config_text(fh.read(), base)
    else:
        cfg = base
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "train":
            for m, (ckpt, csv_path) in harness.run_train(cfg).items():
                print(f"m={m}: {ckpt} {csv_path}")
        elif args.command in ("eval", "baseline"):
            rows = harness.run_eval(cfg) if args.command == "eval" else harness.run_baselines(cfg)
            for r in rows:
                print(f"m={r['size']:<3d} {r['policy']:<7s} sum_rate={r['sum_rate']:.3f} "
                      f"p5_rate={r['p5_rate']:.4f}")
        elif args.command == "gen-drops":
            for path in harness.gen_drops(cfg, args.m, args.count):
                print(path)
        elif args.command == "selftest":
            _, failed = run_selftest(cfg.seed, args.repeats)
            return 1 if failed else 0
    except Exception as exc:  # one-line diagnostic for any failure
        print(f"cfgnn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
