"""Command-line entry point.

Subcommands: train, eval, augment-dump, make-synth. All are
non-interactive and exit 0 on success, 1 on usage/config errors, 2 on
dataset errors, 3 on runtime errors. Every training run writes its
artifacts (manifest, resolved config, logs, checkpoint, metrics) under one
output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .augmenter import sample_mixup_lambda
from .config import config_to_text, load_config
from .data import dataset_digest, load_image_folder, load_sample, make_synthetic_corpus, select_targets
from .errors import CheckpointError, ConfigError, DatasetError, TrainingError
from .evaluation import render_report
from .training import load_checkpoint, models_from_checkpoint, train


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_manifest(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, default=str) + "\n")


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set or [])
    if args.seed is not None:
        cfg.seed_train = args.seed
        cfg.validate()
    if not cfg.source_root:
        raise ConfigError("source_root must be set (config file or --set source_root=...)")
    if not cfg.target_root:
        raise ConfigError("target_root must be set (config file or --set target_root=...)")

    source = load_image_folder(cfg.source_root)
    target_pool = load_image_folder(cfg.target_root)
    targets = select_targets(target_pool, cfg.k_targets, cfg.seed_target_selection,
                             size=cfg.input_size)
    eval_ds = load_image_folder(cfg.eval_root) if cfg.eval_root else target_pool

    out_dir = Path(args.out) if args.out else Path("runs") / time.strftime("run-%Y%m%d-%H%M%S")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved.cfg").write_text(config_to_text(cfg))

    manifest_path = out_dir / "manifest.json"
    manifest = {
        "tool_version": __version__,
        "config": dataclasses.asdict(cfg),
        "seeds": {"train": cfg.seed_train, "target_selection": cfg.seed_target_selection},
        "dataset_digests": {
            "source": dataset_digest(source),
            "target": dataset_digest(target_pool),
            "eval": dataset_digest(eval_ds),
        },
        "target_paths": [str(p) for p in targets.paths],
        "start_time": _now(),
        "end_time": None,
        "status": "running",
    }
    _write_manifest(manifest_path, manifest)

    ckpt, report = train(cfg, source, targets, out_dir, eval_dataset=eval_ds)

    if report is not None:
        (out_dir / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        (out_dir / "metrics.csv").write_text(render_report(report, "csv"))
        (out_dir / "metrics.md").write_text(render_report(report, "markdown"))
        print(render_report(report, "markdown"))
        print(f"class-mean accuracy: {report.mean_accuracy:.2f}%")
    manifest["end_time"] = _now()
    manifest["status"] = "completed"
    manifest["global_step"] = ckpt.global_step
    _write_manifest(manifest_path, manifest)
    print(f"artifacts in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg, _, cm = models_from_checkpoint(ckpt)
    dataset = load_image_folder(args.data)
    if dataset.num_classes != len(ckpt.class_names):
        raise DatasetError(
            f"checkpoint was trained with {len(ckpt.class_names)} classes but "
            f"dataset {dataset.root_path} has {dataset.num_classes}"
        )
    report = evaluate_checkpointed(cm, dataset, args.batch_size, cfg.input_size)
    print(render_report(report, args.format))
    return 0


def evaluate_checkpointed(cm, dataset, batch_size, input_size):
    from .evaluation import evaluate

    return evaluate(cm, dataset, batch_size=batch_size, input_size=input_size)


def cmd_augment_dump(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg, aum, _ = models_from_checkpoint(ckpt)
    if aum is None:
        raise CheckpointError("checkpoint has no augmentation module (source-only run?)")
    aum.eval()
    source = load_image_folder(args.data if args.data else cfg.source_root)
    target_pool = load_image_folder(cfg.target_root)
    targets = select_targets(target_pool, cfg.k_targets, cfg.seed_target_selection,
                             size=cfg.input_size)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    n = min(args.n, len(source))
    idxs = rng.choice(len(source), size=n, replace=False)
    from PIL import Image

    for row, i in enumerate(idxs):
        path, _ = source.samples[int(i)]
        x_s = load_sample(path, size=cfg.input_size).unsqueeze(0)
        x_t = targets.images[row % targets.k].unsqueeze(0)
        lam = sample_mixup_lambda(rng, cfg.mixup_alpha, cfg.mixup_beta) if cfg.variant == "SE" else None
        with torch.no_grad():
            x_aug = aum.augment(x_s, x_t, lam=lam)
        panels = [x_s[0], x_t[0], x_aug[0]]
        grid = torch.cat(panels, dim=2).clamp(0, 1)
        arr = (grid.permute(1, 2, 0).numpy() * 255.0).round().astype("uint8")
        Image.fromarray(arr).save(out_dir / f"grid_{row:03d}.png")
    print(f"wrote {n} augmentation grids (source | target | augmented) to {out_dir}")
    return 0


def cmd_make_synth(args) -> int:
    source, target = make_synthetic_corpus(
        args.out,
        seed=args.seed,
        n_per_class=args.n_per_class,
        n_classes=args.n_classes,
        image_size=args.image_size,
    )
    print(
        f"wrote synthetic corpus under {args.out}: "
        f"{len(source)} source + {len(target)} target images, "
        f"classes {list(source.class_names)}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="styleadapt",
        description="Train a classifier on learned target-styled augmentations of source images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the two-phase training loop")
    p.add_argument("--config", type=str, default=None, help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", type=str, default=None, help="output directory (default runs/<timestamp>)")
    p.add_argument("--seed", type=int, default=None, help="override seed_train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpointed classifier on a class-folder dataset")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True, help="dataset root")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment-dump", help="write source|target|augmented grids from a checkpoint")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--n", type=int, default=4, help="number of sample grids")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--data", type=str, default=None, help="source dataset root (default: from config)")
    p.add_argument("--seed", type=int, default=0, help="sample-choice seed")
    p.set_defaults(func=cmd_augment_dump)

    p = sub.add_parser("make-synth", help="generate the two-domain synthetic shape corpus")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-per-class", type=int, default=50)
    p.add_argument("--n-classes", type=int, default=4)
    p.add_argument("--image-size", type=int, default=64)
    p.set_defaults(func=cmd_make_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, TrainingError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
