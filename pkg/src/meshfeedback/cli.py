"""Command-line surface: synth, train, eval, ablate, infer.

Configuration comes from defaults, then an optional flat YAML file
(--config), then repeated --set key=value overrides, then the dedicated
shortcut flags. Logs go to stderr; data lands only in the declared output
files. Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig, build_body, get_spec
from .errors import ConfigurationError, MeshFeedbackError
from .infer import infer_image, load_image
from .metrics import write_report
from .synth import load_dataset, make_dataset
from .train import ablation_matrix, evaluate_model, model_from_checkpoint, train_model


class UsageError(Exception):
    pass


def _log(*parts) -> None:
    print(*parts, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshfeedback",
                                     description="Mesh alignment feedback toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat YAML config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--preset", choices=("toy", "paper"))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset archive")
    common(p)
    p.add_argument("--count", type=int)

    p = sub.add_parser("train", help="train a model on a dataset archive")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--steps", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--segmentation", action="store_true",
                   help="also score reprojected part segmentation")

    p = sub.add_parser("ablate", help="train and compare feedback modes")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--val-dataset")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    p.add_argument("--modes", default="global:grid,grid:grid,mesh_aligned:grid",
                   help="comma-separated feedback:init pairs")

    p = sub.add_parser("infer", help="run the feedback loop on one image")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--image", help="input PNG at the preset resolution")
    p.add_argument("--dump-features", action="store_true")
    return parser


def _build_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    config = config.with_overrides(args.overrides)
    updates = {}
    for flag, key in (("preset", "preset"), ("seed", "seed"), ("out", "out_dir"),
                      ("count", "count"), ("dataset", "dataset"), ("steps", "steps"),
                      ("checkpoint", "checkpoint"), ("val_dataset", "val_dataset")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[key] = value
    if updates:
        config = config.with_overrides([f"{k}={v}" for k, v in updates.items()])
    return config


def cmd_synth(args) -> int:
    config = _build_config(args)
    if config.count < 1:
        raise UsageError("--count must be at least 1")
    spec = get_spec(config.preset)
    body = build_body(spec, config.body_seed)
    dataset = make_dataset(config.seed, config.count, body, spec.image_size, config.out_dir)
    manifest = json.loads((Path(config.out_dir) / "manifest.json").read_text())
    _log(f"wrote {manifest['count']} samples at {manifest['resolution']}px "
         f"(seed {manifest['seed']}) to {config.out_dir}")
    _log(f"body: {body.n_vertices} vertices, {body.n_joints} joints, "
         f"{body.n_parts} parts; mean area "
         f"{sum(s.area for s in dataset.samples) / len(dataset):.0f} px")
    return 0


def cmd_train(args) -> int:
    config = _build_config(args)
    if not config.dataset:
        raise UsageError("train needs --dataset (or the dataset config key)")
    dataset = load_dataset(config.dataset)
    ckpt = train_model(config, dataset, config.out_dir, resume_from=args.resume)
    _log(f"trained {config.steps} steps; checkpoint at {ckpt}")
    return 0


def cmd_eval(args) -> int:
    config = _build_config(args)
    if not config.checkpoint or not config.dataset:
        raise UsageError("eval needs --checkpoint and --dataset")
    model, _ = model_from_checkpoint(config.checkpoint, config)
    dataset = load_dataset(config.dataset)
    result = evaluate_model(model, dataset, with_segmentation=args.segmentation,
                            with_aux_accuracy=True)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report(result.rows, out / "metrics.csv", out / "summary.json")
    with open(out / "summary.json", "w") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log(f"eval over {result.summary['count']} samples: "
         f"MPJPE {result.summary['mean_mpjpe']:.1f}mm, "
         f"PA-MPJPE {result.summary['mean_pa_mpjpe']:.1f}mm, "
         f"PVE {result.summary['mean_pve']:.1f}mm, OKS {result.summary['mean_oks']:.3f}")
    return 0


def cmd_ablate(args) -> int:
    config = _build_config(args)
    if not config.dataset or not config.val_dataset:
        raise UsageError("ablate needs --dataset and --val-dataset")
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s]
        modes = []
        for pair in args.modes.split(","):
            feedback, _, init = pair.partition(":")
            modes.append((feedback, init or "grid"))
    except ValueError as exc:
        raise UsageError(f"bad --seeds/--modes: {exc}") from exc
    train_ds = load_dataset(config.dataset)
    val_ds = load_dataset(config.val_dataset)
    rows = ablation_matrix(config, train_ds, val_ds, seeds, config.out_dir, modes)
    _log(f"ablation wrote {len(rows)} rows to {Path(config.out_dir) / 'ablation.csv'}")
    return 0


def cmd_infer(args) -> int:
    config = _build_config(args)
    if not config.checkpoint or not args.image:
        raise UsageError("infer needs --checkpoint and --image")
    model, _ = model_from_checkpoint(config.checkpoint, config)
    image = load_image(args.image, model.spec.image_size)
    dump_features = args.dump_features or config.dump_features
    infer_image(model, image, config.out_dir, dump_features=dump_features)
    _log(f"wrote {model.loop.iterations} overlays and params.json to {config.out_dir}")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "infer": cmd_infer}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; 0 for --help
        return 0 if exc.code == 0 else 1
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as exc:
        _log(f"usage error: {exc}")
        return 1
    except (MeshFeedbackError, OSError) as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
