"""Command line entry point: ``iic <subcommand> --config PATH [options]``."""

import argparse
import glob
import logging
import os
import sys

import numpy as np

from .. import data as dataio
from .config import ConfigError, format_config, load_config

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

SUBCOMMANDS = ("train-cluster", "train-seg", "eval", "gen-synth", "show-config")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser():
    parser = _Parser(prog="iic", description="Invariant information clustering")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--epochs", type=int, help="override the epoch count")
        if name == "eval":
            p.add_argument("--checkpoint", help="checkpoint file (default: latest in the output dir)")
            p.add_argument("--protocol", choices=("one_to_one", "many_to_one"), default="one_to_one")
    return parser


def latest_checkpoint(out_dir):
    found = sorted(glob.glob(os.path.join(out_dir, "epoch_*.ckpt")))
    if not found:
        raise FileNotFoundError(f"no checkpoints in {out_dir}")
    return found[-1]


def gen_synth(cfg):
    from .train import load_dataset

    os.makedirs(cfg.out, exist_ok=True)
    ds = load_dataset(cfg)
    written = []
    if ds.kind == "vectors":
        path = os.path.join(cfg.out, "points.csv")
        with open(path, "w") as f:
            f.write("x0,x1,label\n")
            for x, y in zip(ds.samples, ds.labels):
                f.write(f"{x[0]!r},{x[1]!r},{int(y)}\n")
        written.append(path)
    else:
        for i, img in enumerate(ds.samples):
            p = os.path.join(cfg.out, f"img_{i:03d}.pnm")
            dataio.write_pnm(p, img[0] if img.shape[0] == 1 else np.moveaxis(img, 0, -1))
            written.append(p)
            if ds.labels is not None and np.ndim(ds.labels[i]) == 2:
                p = os.path.join(cfg.out, f"mask_{i:03d}.pnm")
                dataio.write_pnm(p, ds.labels[i], palette=dataio.PALETTE)
                written.append(p)
    return written


def run(args):
    cfg = load_config(args.config, seed=args.seed, out=args.out, epochs=args.epochs)
    if args.command == "show-config":
        sys.stdout.write(format_config(cfg))
        return EXIT_OK
    if args.command == "gen-synth":
        for p in gen_synth(cfg):
            print(p)
        return EXIT_OK

    from .train import evaluate, train_cluster, train_segment

    if args.command in ("train-cluster", "train-seg"):
        want = "cluster" if args.command == "train-cluster" else "segment"
        if cfg.task != want:
            raise UsageError(f"{args.command} needs task = {want} in the config (got {cfg.task})")
        fn = train_cluster if want == "cluster" else train_segment

        def progress(rec):
            print(f"epoch {rec.epoch:4d}  loss_main {rec.loss_main:+.4f}  "
                  f"acc_best {rec.acc_best:.4f}  acc_avg {rec.acc_avg:.4f}", flush=True)

        rec = fn(cfg, progress)
        print(f"final acc_best {rec.acc_best:.4f} (sub-head {rec.best_subhead}); outputs in {cfg.out}")
        return EXIT_OK

    from ..report import render_report

    ckpt = args.checkpoint or latest_checkpoint(cfg.out)
    report = evaluate(ckpt, cfg, args.protocol)
    for i, acc in enumerate(report["subhead_acc"]):
        flag = "  <- best (lowest loss)" if i == report["best_subhead"] else ""
        print(f"sub-head {i}: accuracy {acc:.4f}  loss {report['subhead_loss'][i]:+.4f}{flag}")
    print(f"avg {report['acc_avg']:.4f} +- {report['acc_std']:.4f} ({report['std_note']})")
    for p in render_report(report, cfg.out, os.path.join(cfg.out, "metrics.csv")):
        print(p)
    return EXIT_OK


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "iic: error: a subcommand is required")
        if not os.path.exists(args.config):
            raise UsageError(f"{parser.format_usage()}iic: error: config file not found: {args.config}")
        return run(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"iic: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # runtime failures become exit code 2
        logging.getLogger(__name__).debug("runtime failure", exc_info=True)
        print(f"iic: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
