"""Command-line entry point: ``sttraj train|eval|ablate|sample|synth``."""
import argparse
import csv
import logging
import os
import sys

import numpy as np

from .config import PROFILES, load_config_file, profile_config
from .data import find_scene, leave_one_out_split, load_dataset
from .errors import ConfigError, IncompatibleCheckpointError
from .gcn import VARIANTS
from .model import load_checkpoint
from .synth import KINDS, write_synthetic
from .train import collect_samples, evaluate_scenes, export_samples, train, zero_gradient_parameters

log = logging.getLogger("sttraj")

# flag name -> RunConfig field
_FLAG_FIELDS = {
    "dataset_dir": "dataset_dir", "test_scene": "test_scene", "epochs": "epochs", "alpha": "alpha",
    "variant": "variant", "k": "eval_k", "seed": "seed", "out": "output_dir", "batch_size": "batch_size",
    "lr_initial": "lr_initial", "lr_after": "lr_after", "lr_switch_epoch": "lr_switch_epoch",
    "val_fraction": "val_fraction", "d_model": "d_model", "heads": "heads", "stride": "stride",
}


def _common(p):
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--profile", choices=sorted(PROFILES), help="named defaults (paper or desk)")
    p.add_argument("--dataset-dir")
    p.add_argument("--test-scene")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-initial", type=float)
    p.add_argument("--lr-after", type=float)
    p.add_argument("--lr-switch-epoch", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--d-model", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--k", type=int, help="samples per window for best-of-K evaluation")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def build_config(args):
    """Profile defaults < config file < command-line flags."""
    values = {}
    if args.config:
        values.update(load_config_file(args.config))
    profile = args.profile or values.pop("profile", "paper")
    values.pop("profile", None)
    for flag, key in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    return profile_config(profile, **values)


def _train_scenes(cfg):
    if not cfg.dataset_dir:
        raise ConfigError("--dataset-dir is required")
    scenes = load_dataset(cfg.dataset_dir)
    if not scenes:
        raise FileNotFoundError(f"no scene files (*.txt) in {cfg.dataset_dir}")
    return scenes


def cmd_train(args):
    cfg = build_config(args)
    scenes = _train_scenes(cfg)
    if cfg.test_scene:
        train_scenes, test = leave_one_out_split(scenes, cfg.test_scene)
        log.info("training on %s, holding out %s", [s.name for s in train_scenes], test.name)
    else:
        train_scenes = scenes
    history, _ = train(cfg, train_scenes, cfg.output_dir, resume=args.resume)
    for s in history:
        print(f"epoch {s.epoch:4d}  nll {s.nll:10.4f}  mmd {s.mmd:8.4f}  total {s.total:10.4f}  lr {s.lr:g}")
    return 0


def _checked_model(args, cfg):
    model, ckpt = load_checkpoint(args.checkpoint)
    if args.variant is not None and args.variant != ckpt.config.variant:
        raise IncompatibleCheckpointError(
            f"checkpoint was trained with variant {ckpt.config.variant}, but --variant {args.variant} was given")
    return model


def cmd_eval(args):
    cfg = build_config(args)
    model = _checked_model(args, cfg)
    scenes = _train_scenes(cfg)
    targets = [find_scene(scenes, cfg.test_scene)] if cfg.test_scene else scenes
    report = evaluate_scenes(model, targets, cfg.eval_k, cfg.seed, cfg.stride)
    print(report.format_table())
    os.makedirs(cfg.output_dir, exist_ok=True)
    report.write_csv(os.path.join(cfg.output_dir, "metrics.csv"))
    return 0


def ablation_rows(cfg, axis, values, scenes=None, out_dir=None):
    """Train and evaluate one model per ablation value.

    Each test scene gets its own leave-one-out model. Returns the CSV header
    and one row per value.
    """
    scenes = scenes if scenes is not None else _train_scenes(cfg)
    out_dir = out_dir or cfg.output_dir
    tests = [find_scene(scenes, cfg.test_scene).name] if cfg.test_scene else [s.name for s in scenes]
    header = ["value"]
    for t in tests:
        header += [f"{t}_ade", f"{t}_fde"]
    header += ["avg_ade", "avg_fde", "zero_grad_params"]
    rows = []
    for value in values:
        run = cfg.replace(alpha=float(value)) if axis == "alpha" else cfg.replace(variant=str(value))
        ades, fdes, dead = [], [], set()
        row = [value]
        for t in tests:
            train_scenes, test = leave_one_out_split(scenes, t)
            _, model = train(run, train_scenes, os.path.join(out_dir, f"{axis}_{value}", test.name))
            a, f, _ = evaluate_scenes(model, [test], run.eval_k, run.seed, run.stride).per_scene[test.name]
            ades.append(a)
            fdes.append(f)
            row += [repr(a), repr(f)]
            dead |= set(zero_gradient_parameters(model, collect_samples(train_scenes, run), run))
        row += [repr(float(np.mean(ades))), repr(float(np.mean(fdes))), ";".join(sorted(dead))]
        rows.append(row)
    return header, rows


def cmd_ablate(args):
    if not args.values:
        raise SystemExit("ablate: --values must list at least one value")
    cfg = build_config(args)
    if args.axis == "variant":
        bad = [v for v in args.values if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}")
    else:
        try:
            [float(v) for v in args.values]
        except ValueError:
            raise ConfigError(f"alpha values must be numbers, got {args.values}") from None
    header, rows = ablation_rows(cfg, args.axis, args.values)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, f"ablation_{args.axis}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    with open(path) as fh:
        sys.stdout.write(fh.read())
    return 0


def cmd_sample(args):
    cfg = build_config(args)
    model = _checked_model(args, cfg)
    scenes = _train_scenes(cfg)
    scene = find_scene(scenes, args.scene or cfg.test_scene)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, f"samples_{scene.name}_{args.window_index}.csv")
    export_samples(model, scene, args.window_index, cfg.eval_k, cfg.seed, path, cfg.stride)
    print(path)
    return 0


def cmd_synth(args):
    out = args.out or "synthetic"
    seed = args.seed if args.seed is not None else 0
    for p in write_synthetic(out, args.kind, args.n_scenes, seed):
        print(p)
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="sttraj", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train with leave-one-scene-out")
    _common(p)
    p.add_argument("--resume", help="continue from a checkpoint's epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="best-of-K ADE/FDE/var_ade report")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate across alpha or variant values")
    _common(p)
    p.add_argument("--axis", choices=("alpha", "variant"), required=True)
    p.add_argument("--values", nargs="*", default=[])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sample", help="export a sample cloud for one window")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene")
    p.add_argument("--window-index", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("synth", help="write synthetic ETH/UCY-format scenes")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--n-scenes", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IncompatibleCheckpointError, LookupError, FileNotFoundError, IndexError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
