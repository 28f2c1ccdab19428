"""Command-line entry point.

Subcommands: gen-fixtures, train, eval, gradcheck, inspect-masks. Every
successful run prints a one-line JSON summary as its final stdout line;
errors print a one-line JSON object to stderr. Exit codes: 0 success,
1 usage, 2 data error, 3 numeric failure. HMT_SEED overrides --seed where
a command takes one.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import bundles
from .config import load_config
from .errors import ConfigError, DataError, HmtError, NumericError
from .gradcheck import model_gradient_check
from .dmt import dmt_pipeline, masks_to_json
from .mmt import mmt_forward
from .model import load_params, save_params
from .assembly import build_sequences
from .tensor import Graph
from .trainer import evaluate, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we need exit 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="hmt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-fixtures", help="generate synthetic splits")
    gen.add_argument("--out", required=True)
    gen.add_argument("--docs", type=int, required=True)
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--mode", choices=["planted", "xor"], required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--sigma", type=float, default=0.3)

    tr = sub.add_parser("train", help="train on DIR/train.hmtb + DIR/val.hmtb")
    tr.add_argument("--data", required=True)
    tr.add_argument("--config", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--log", required=True)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--data", required=True)
    ev.add_argument("--model", required=True)
    ev.add_argument("--report", required=True)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("--config", required=True)
    gc.add_argument("--seed", type=int, default=None)
    gc.add_argument("--tolerance", type=float, default=1e-4)

    im = sub.add_parser("inspect-masks", help="dump transfer masks as JSON")
    im.add_argument("--data", required=True)
    im.add_argument("--model", required=True)
    im.add_argument("--doc", required=True)
    im.add_argument("--out", required=True)
    return parser


def _seed_override(value):
    env = os.environ.get("HMT_SEED")
    if env is not None:
        return int(env)
    return value


def _emit(payload: dict) -> None:
    print(json.dumps(payload))


def _cmd_gen_fixtures(args) -> int:
    seed = _seed_override(args.seed)
    os.makedirs(args.out, exist_ok=True)
    side = max(1, args.docs // 5)
    counts = {"train": args.docs, "val": side, "test": side}
    written = {}
    for i, (tag, docs) in enumerate(counts.items()):
        split = bundles.synth_generate(bundles.SynthSpec(
            docs=docs, num_classes=args.classes, sigma=args.sigma,
            mode=args.mode, seed=seed + i,
        ), tag=tag)
        path = os.path.join(args.out, f"{tag}.hmtb")
        bundles.write_hmtb(split, path)
        written[tag] = docs
    _emit({"command": "gen-fixtures", "out": args.out, "docs": written,
           "mode": args.mode, "seed": seed})
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_split = bundles.read_hmtb(os.path.join(args.data, "train.hmtb"), tag="train")
    val_split = bundles.read_hmtb(os.path.join(args.data, "val.hmtb"), tag="val")
    params, log = train(train_split, val_split, cfg)
    save_params(params, args.out, cfg)
    with open(args.log, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record) + "\n")
    best = max((rec["val_macro_f1"] for rec in log), default=0.0)
    _emit({"command": "train", "epochs": len(log), "best_val_macro_f1": best,
           "model": args.out, "log": args.log})
    return EXIT_OK


def _eval_split_path(data_dir: str) -> str:
    test = os.path.join(data_dir, "test.hmtb")
    return test if os.path.exists(test) else os.path.join(data_dir, "val.hmtb")


def _cmd_eval(args) -> int:
    params, cfg = load_params(args.model)
    path = _eval_split_path(args.data)
    split = bundles.read_hmtb(path, tag=os.path.basename(path).split(".")[0])
    report = evaluate(split, params, cfg)
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    _emit({"command": "eval", "split": split.tag, "accuracy": report.accuracy,
           "macro_f1": report.macro_f1, "report": args.report})
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    cfg = load_config(args.config)
    seed = _seed_override(args.seed)
    report = model_gradient_check(cfg, seed=seed)
    worst = report["__overall__"]
    passed = worst < args.tolerance
    _emit({"command": "gradcheck", "max_rel_err": worst,
           "tolerance": args.tolerance, "passed": passed})
    if not passed:
        raise NumericError(
            f"gradient check failed: max relative error {worst:.3e} "
            f">= {args.tolerance:.3e}"
        )
    return EXIT_OK


def _cmd_inspect_masks(args) -> int:
    params, cfg = load_params(args.model)
    bundle = None
    searched = []
    for tag in ("test", "val", "train"):
        path = os.path.join(args.data, f"{tag}.hmtb")
        if not os.path.exists(path):
            continue
        searched.append(path)
        matches = [b for b in bundles.read_hmtb(path) if b.doc_id == args.doc]
        if matches:
            bundle = matches[0]
            break
    if bundle is None:
        raise DataError(f"document '{args.doc}' not found in {searched}")
    g = Graph(record=False)
    assembled = build_sequences(g, bundle, params)
    mmt_out = mmt_forward(g, assembled.section_seq, params, cfg.h, cfg.layers)
    masks = dmt_pipeline(mmt_out, assembled, bundle.section_feats, cfg.eta, cfg.h)
    payload = masks_to_json(bundle.doc_id, cfg.eta, masks)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(payload + "\n")
    _emit({"command": "inspect-masks", "doc": bundle.doc_id,
           "heads": cfg.h, "out": args.out})
    return EXIT_OK


_DISPATCH = {
    "gen-fixtures": _cmd_gen_fixtures,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "inspect-masks": _cmd_inspect_masks,
}


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": message, "type": kind}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail("usage", str(exc), EXIT_USAGE)
    try:
        return _DISPATCH[args.command](args)
    except NumericError as exc:
        return _fail("numeric", str(exc), EXIT_NUMERIC)
    except (DataError, ConfigError, FileNotFoundError) as exc:
        return _fail("data", str(exc), EXIT_DATA)
    except HmtError as exc:
        return _fail("internal", str(exc), EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
