"""Command-line entry point: ``danet <verb> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from danet import bench
from danet.checkpoint import CheckpointError, load_checkpoint
from danet.dataio import (SHAPE_FAMILIES, DataError, SyntheticShapeSpec,
                          generate_synthetic_dataset, load_manifest, load_split)
from danet.network import (ConfigError, DANet, build_classifier, build_part_segmenter,
                           build_semantic_segmenter, format_architecture, load_architecture)
from danet.training import TrainConfig, evaluate, evaluate_with_voting, train

ARCH_FILE = "arch.cfg"
BUILTIN = {
    "classifier": build_classifier,
    "semantic": build_semantic_segmenter,
    "part": build_part_segmenter,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _architecture(ref: str):
    """``builtin:<name>`` or a path to an architecture file."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in BUILTIN:
            raise UsageError(f"unknown builtin architecture '{name}' (choose {sorted(BUILTIN)})")
        return BUILTIN[name]()
    return load_architecture(ref)


def _write_csv(path: Optional[str], seed: int, header: str, rows) -> None:
    lines = [f"# seed={seed}", header] + [",".join(str(v) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _load_model(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    ckpt = Path(args.checkpoint)
    arch = args.arch or str(ckpt.parent / ARCH_FILE)
    model = DANet(_architecture(arch), seed=args.seed)
    model.load_state_dict(load_checkpoint(ckpt))
    return model


def _test_split(args):
    if not args.manifest:
        raise UsageError("--manifest is required")
    return load_split(load_manifest(args.manifest), args.split)


# -- verbs -------------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if not args.out:
        raise UsageError("--out is required")
    classes = args.classes.split(",") if args.classes else list(SHAPE_FAMILIES)
    specs = [SyntheticShapeSpec(c, noise=args.noise) for c in classes]
    manifest = generate_synthetic_dataset(specs, args.train, args.test, args.points,
                                          args.seed, args.out)
    print(f"wrote {sum(len(v) for v in manifest.splits.values())} samples, "
          f"manifest {Path(args.out) / 'manifest.txt'}")
    return 0


def cmd_train(args) -> int:
    if not args.config:
        raise UsageError("--config is required")
    cfg_path = Path(args.config)
    if not cfg_path.is_file():
        raise UsageError(f"config file not found: {cfg_path}")
    try:
        cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{cfg_path}: {exc}") from None

    def resolve(value):
        if value is None or str(value).startswith("builtin:"):
            return value
        p = Path(value)
        return str(p if p.is_absolute() else cfg_path.parent / p)

    manifest_ref = resolve(cfg.pop("manifest", None))
    arch_ref = resolve(cfg.pop("architecture", "builtin:classifier"))
    manifest_ref = args.manifest or manifest_ref
    arch_ref = args.arch or arch_ref
    if manifest_ref is None:
        raise UsageError("no manifest given (config key 'manifest' or --manifest)")
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out:
        cfg["out_dir"] = args.out
    try:
        config = TrainConfig(**cfg)
    except TypeError as exc:
        raise DataError(f"{cfg_path}: {exc}") from None
    spec = _architecture(arch_ref)
    manifest = load_manifest(manifest_ref)
    train_data = load_split(manifest, "train")
    val = load_split(manifest, "test") if "test" in manifest.splits else None
    model = DANet(spec, seed=config.seed)
    result = train(model, train_data, config, val, log=print)
    Path(config.out_dir, ARCH_FILE).write_text(format_architecture(spec), encoding="utf-8")
    last = result.rows[-1]
    print(f"final train_acc {last['train_acc']:.4f} val_acc {last['val_acc']:.4f} "
          f"({result.seconds:.0f}s)")
    print(f"checkpoint {result.checkpoint}")
    print(f"metrics {result.metrics}")
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args)
    data = _test_split(args)
    acc = evaluate(model, data)
    print(f"accuracy {acc:.4f}")
    if args.votes:
        print(f"voting_accuracy {evaluate_with_voting(model, data, votes=args.votes):.4f}")
    return 0


def cmd_density_sweep(args) -> int:
    model = _load_model(args)
    data = _test_split(args)
    levels = [int(v) for v in args.levels.split(",")] if args.levels else None
    rows = bench.density_sweep(model, data, levels, args.mode, args.seed)
    _write_csv(args.out, args.seed, "n_points,accuracy", rows)
    return 0


def cmd_perturb_sweep(args) -> int:
    model = _load_model(args)
    data = _test_split(args)
    _write_csv(args.out, args.seed, "condition,accuracy", bench.perturb_sweep(model, data, args.seed))
    return 0


def cmd_cost(args) -> int:
    spec = _architecture(args.config or "builtin:classifier")
    if args.r is not None:
        spec = spec.with_overrides(use_iam=True, r=args.r)
    text = "\n".join(bench.cost_report(spec, args.points)) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="danet", description="Density adaptive point-cloud networks.")
    sub = parser.add_subparsers(dest="verb", metavar="verb", parser_class=_Parser)
    sub.required = True

    def verb(name, func, help_text, seed_default=0):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=seed_default, help="run seed")
        p.add_argument("--out", help="output path")
        p.set_defaults(func=func)
        return p

    def model_args(p):
        p.add_argument("--checkpoint", help="trained checkpoint")
        p.add_argument("--arch", help="architecture file (default: arch.cfg beside the checkpoint)")
        p.add_argument("--manifest", help="dataset manifest")
        p.add_argument("--split", default="test")

    p = verb("gen-data", cmd_gen_data, "write a synthetic shape dataset")
    p.add_argument("--train", type=int, default=20, help="training samples per class")
    p.add_argument("--test", type=int, default=10, help="test samples per class")
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--classes", help=f"comma-separated families (default: {','.join(SHAPE_FAMILIES)})")

    p = verb("train", cmd_train, "train a network", seed_default=None)
    p.add_argument("--config", help="training config (JSON)")
    p.add_argument("--arch", help="architecture file or builtin:<name>")
    p.add_argument("--manifest", help="dataset manifest")
    p.add_argument("--checkpoint", help=argparse.SUPPRESS)

    p = verb("eval", cmd_eval, "evaluate a checkpoint")
    model_args(p)
    p.add_argument("--votes", type=int, default=0, help="also report voting accuracy")

    p = verb("density-sweep", cmd_density_sweep, "accuracy against input point count")
    model_args(p)
    p.add_argument("--levels", help="comma-separated point counts (default: scaled ladder)")
    p.add_argument("--mode", choices=("random", "fps"), default="random")

    p = verb("perturb-sweep", cmd_perturb_sweep, "accuracy under permutations and transforms")
    model_args(p)

    p = verb("cost", cmd_cost, "parameter, FLOP and dynamic-weight report")
    p.add_argument("--config", help="architecture file or builtin:<name>")
    p.add_argument("--points", type=int, default=1024)
    p.add_argument("--r", type=int, help="IAM reduction ratio to apply")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DataError, ConfigError, CheckpointError, KeyError, ValueError, OSError) as exc:
        print(f"danet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
