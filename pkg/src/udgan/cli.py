"""``udgan`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from . import pipeline
from .config import load_run_config
from .errors import ConfigError, DataError, TrainingError
from .synthetic import SyntheticSpec, make_synthetic, spec_dict

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _common(p, out_required=False):
    p.add_argument("--config", help="YAML run configuration (defaults are used when omitted)")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, help="override train.seed")


def build_parser():
    parser = argparse.ArgumentParser(prog="udgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="render a synthetic identity x content dataset")
    p.add_argument("--ids", type=int, default=16)
    p.add_argument("--per-id", type=int, default=8)
    p.add_argument("--size", type=_size, default=(48, 16), help="image HxW (default 48x16)")
    p.add_argument("--cameras", type=int, default=4)
    p.add_argument("--domain", choices=("source", "target"), default="source")
    p.add_argument("--id-offset", type=int, default=0)
    p.add_argument("--gen-blocks", type=int, default=4,
                   help="generator depth the image size must be compatible with")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--dry-run", action="store_true",
                   help="validate the configuration and print the step schedule")
    _common(p)

    p = sub.add_parser("mine-pairs", help="mine same-identity target pairs")
    p.add_argument("--checkpoint")
    p.add_argument("--labels", action="store_true",
                   help="score the pairs against the identities in the file names")
    _common(p)

    p = sub.add_parser("evaluate", help="cross-camera CMC / mAP on query and gallery")
    p.add_argument("--checkpoint")
    p.add_argument("--tag", default="eval")
    _common(p)

    p = sub.add_parser("generate-grid", help="montage of originals, reconstructions and swaps")
    p.add_argument("--checkpoint")
    p.add_argument("--pairs", type=int, default=6)
    _common(p)
    return parser


def _run_config(args):
    run = load_run_config(args.config)
    if args.out:
        run.out_dir = args.out
    if args.seed is not None:
        run.train.seed = args.seed
    run.validate()
    return run


def _dispatch(args):
    if args.command == "make-synthetic":
        spec = SyntheticSpec(args.ids, args.per_id, args.size, args.seed, args.cameras,
                             args.id_offset, args.domain)
        ds = make_synthetic(spec, args.out, generator_blocks=args.gen_blocks)
        Path(args.out, "synthetic.yaml").write_text(yaml.safe_dump(spec_dict(spec), sort_keys=False))
        print(f"wrote {len(ds.images)} images ({spec.num_identities} identities) to {args.out}")
        return

    run = _run_config(args)
    pipeline.prepare_out(run)
    if args.command == "train":
        if args.dry_run:
            print(pipeline.schedule_preview(run, args.stage))
            return
        pipeline.train_stage(run, args.stage)
    elif args.command == "mine-pairs":
        pipeline.mine(run, args.checkpoint, with_labels=args.labels)
    elif args.command == "evaluate":
        pipeline.evaluate_run(run, args.checkpoint, args.tag)
    elif args.command == "generate-grid":
        pipeline.generate_grid(run, args.checkpoint, args.pairs)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except ConfigError as exc:
        print(f"udgan: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"udgan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, RuntimeError, ValueError) as exc:
        print(f"udgan: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
