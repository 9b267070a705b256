"""``fetnet`` command line: gen-data, train, eval, infer, ablate.

Every command writes into a fresh timestamped directory under
``$FETNET_OUTPUT_ROOT`` (default ``./runs``) together with the resolved config.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..datagen import corpus_specs, load_dataset, write_dataset
from .ablate import ablate
from .config import COMPONENT_VARIANTS, TrainConfig, load_config, make_run_dir, save_config
from .evaluate import evaluate, infer
from .train import train


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field (repeatable; nested: weights.lambda_s=60)")
    p.add_argument("--preset", choices=["toy", "full"])
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant")
    p.add_argument("--data", dest="data_dir", help="dataset root with input/, gt/ and optional mask/")


def _resolve(args) -> TrainConfig:
    overrides = list(args.overrides)
    for key in ("preset", "steps", "seed", "variant", "data_dir"):
        value = getattr(args, key, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_config(args.config, overrides)


def cmd_gen_data(args) -> Path:
    root = Path(args.out) if args.out else make_run_dir("gen-data") / "data"
    specs = corpus_specs(args.n, args.seed, (args.size, args.size), args.n_texts)
    write_dataset(root, specs)
    print(root)
    return root


def cmd_train(args) -> Path:
    cfg = _resolve(args)
    run = make_run_dir("train")
    result = train(cfg, run)
    print(result.checkpoint_path)
    return run


def cmd_eval(args) -> Path:
    run = make_run_dir("eval")
    summary, _ = evaluate(args.checkpoint, load_dataset(args.data), run / "metrics.csv")
    (run / "eval.json").write_text(json.dumps({"checkpoint": str(args.checkpoint), "data": str(args.data)}))
    print(json.dumps(summary.row()))
    return run


def cmd_infer(args) -> Path:
    run = make_run_dir("infer")
    paths = infer(args.checkpoint, args.image, run, dump_features=args.dump_features)
    for p in paths.values():
        print(p)
    return run


def cmd_ablate(args) -> Path:
    cfg = _resolve(args)
    run = make_run_dir("ablate")
    save_config(cfg, run / "config.yaml")
    variants = args.variants.split(",") if args.variants else list(COMPONENT_VARIANTS)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    ablate(cfg, variants, run, seeds=seeds)
    print(run / "ablation.csv")
    return run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fetnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic triplet dataset")
    p.add_argument("--out", help="dataset root (default: inside a new run directory)")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--n-texts", type=int, default=2)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a generator/discriminator pair")
    _config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset directory")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="remove text from one image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--dump-features", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="train and compare generator variants")
    _config_args(p)
    p.add_argument("--variants", help=f"comma separated (default: {','.join(COMPONENT_VARIANTS)})")
    p.add_argument("--seeds", help="comma separated seeds (default: the config seed)")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
