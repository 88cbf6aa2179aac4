"""Command-line entry point: ``lorapair {gen-data,pretrain,finetune,evaluate,ablate}``.

Exit codes: 0 success, 1 validation/configuration error, 2 I/O error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .config import load_config
from .data import write_tsv
from .errors import LorapairError

log = logging.getLogger("lorapair")


def _common(p):
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key; repeatable")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="lorapair", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic corpus as TSV")
    _common(p)

    p = sub.add_parser("pretrain", help="train and freeze the base encoder")
    _common(p)

    p = sub.add_parser("finetune", help="fine-tune adapters on a frozen base")
    _common(p)
    p.add_argument("--checkpoint", type=Path, help="base checkpoint (default: OUT/base.ckpt)")

    p = sub.add_parser("evaluate", help="score a split and write report.csv / per_example.csv")
    _common(p)
    p.add_argument("--checkpoint", type=Path, help="base checkpoint (default: OUT/base.ckpt)")
    p.add_argument("--adapters", type=Path, help="adapter checkpoint (default: OUT/adapters.ckpt if present)")
    p.add_argument("--no-adapters", action="store_true", help="evaluate the frozen base alone")
    p.add_argument("--split", default="validation", choices=["pretrain", "train", "validation", "test"])

    p = sub.add_parser("ablate", help="run the four-configuration ablation suite")
    _common(p)
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    return parser


def _config(args):
    overrides = [o for o in args.overrides]
    cfg = load_config(args.config, overrides, seed=args.seed)
    if args.out is not None:
        cfg = cfg.replace(out_dir=str(args.out))
    return cfg


def run(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")

    if args.command == "gen-data":
        examples = harness.load_examples(cfg)
        write_tsv(out / "data.tsv", examples)
        print(f"wrote {len(examples)} pairs to {out / 'data.tsv'}")
    elif args.command == "pretrain":
        res = harness.pretrain_and_freeze(cfg, out)
        print(f"base checkpoint {res.checkpoint} (pretrain-slice acc {res.pretrain_acc:.4f})")
    elif args.command == "finetune":
        ckpt = args.checkpoint or out / harness.BASE_CKPT
        res = harness.finetune(cfg, ckpt, out)
        rep = res.param_report
        print(f"adapters {res.adapter_checkpoint}; trainable {rep['trainable_params']} of "
              f"{rep['total_params']}; final val acc {res.validation.acc:.4f}")
    elif args.command == "evaluate":
        ckpt = args.checkpoint or out / harness.BASE_CKPT
        adapters = None
        if not args.no_adapters:
            adapters = args.adapters
            if adapters is None and (out / harness.ADAPTER_CKPT).exists():
                adapters = out / harness.ADAPTER_CKPT
        model = harness.load_finetuned(ckpt, adapters)
        res = harness.evaluate(cfg, model, args.split, out)
        r = res.report
        print(f"{args.split}: acc {r.acc:.4f} f1 {r.f1:.4f} mcc {r.mcc:.4f} (threshold {res.threshold:.6g})")
    elif args.command == "ablate":
        rows = harness.run_ablation_suite(cfg, out, args.split)
        print(",".join(harness.ABLATION_HEADER))
        for row in rows:
            print(f"{row.config_name},{row.acc:.6g},{row.f1:.6g},{row.mcc:.6g}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except LorapairError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
