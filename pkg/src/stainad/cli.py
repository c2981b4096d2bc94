"""Command-line interface.

Subcommands: corrupt, synth-data, train, evaluate, report. Runs are described
by a JSON config file; a handful of flags (--seed, --out, --n, --strategy,
--jobs) override the matching config scalars. Every artifact filename starts
with an 8-hex hash of the resolved config, so outputs from different setups
never collide. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
failure.
"""

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .corruption import CorruptionSpec, corrupt
from .dataset import (
    DatasetIndex,
    SyntheticDatasetSpec,
    load_image,
    load_mask,
    make_synthetic,
    scan_mvtec,
)
from .detection import residual_map, save_map, uncertainty_map
from .errors import ConfigError, DataError, TrainingDiverged
from .evaluation import (
    CategoryResult,
    EvalReport,
    STRATEGIES,
    category_group,
    evaluate_index,
    render_report,
    save_preview_panel,
    save_roc_png,
)
from .hashing import config_hash
from .image import GrayImage
from .model import ModelSpec, build, load_checkpoint, spec_from_dict, _spec_dict
from .training import TrainConfig, prepare_resume, train

DATA_ROOT_ENV = "STAINAD_DATA_ROOT"

TOP_KEYS = {"seed", "output_dir", "dataset", "corruption", "model", "train", "detect"}
DATASET_KEYS = {"root", "category", "resolution", "synthetic"}
SYNTH_KEYS = {"generator", "n_train", "n_test_clean", "n_test_defective", "resolution", "defect"}
CORRUPTION_KEYS = {"kind", "gaussian_sigma"}
MODEL_KEYS = {"input_size", "levels", "channel_plan", "kernel", "skip_connections",
              "dropout_schedule"}
TRAIN_KEYS = {"epochs", "batch_size", "lr", "lr_decay_factor", "plateau_patience",
              "min_improvement_db", "val_fraction", "grad_clip"}
DETECT_KEYS = {"p", "passes"}


# ---- config plumbing ----


def _load_config(path):
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(cfg, TOP_KEYS, "config")
    for section, keys in (
        ("dataset", DATASET_KEYS),
        ("corruption", CORRUPTION_KEYS),
        ("model", MODEL_KEYS),
        ("train", TRAIN_KEYS),
        ("detect", DETECT_KEYS),
    ):
        if section in cfg:
            if not isinstance(cfg[section], dict):
                raise ConfigError(f"config section {section!r} must be an object")
            _reject_unknown(cfg[section], keys, section)
    if "synthetic" in cfg.get("dataset", {}):
        _reject_unknown(cfg["dataset"]["synthetic"], SYNTH_KEYS, "dataset.synthetic")
    return cfg


def _reject_unknown(mapping, allowed, where):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _seed_of(cfg, args):
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise ConfigError("a seed is mandatory: set 'seed' in the config or pass --seed")
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    return seed


def _output_dir(cfg, args):
    out = args.out if getattr(args, "out", None) else cfg.get("output_dir", "runs")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _corruption_spec(cfg):
    section = cfg.get("corruption", {})
    try:
        return CorruptionSpec(
            kind=section.get("kind", "stain"),
            gaussian_sigma=section.get("gaussian_sigma"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def _resolution(cfg):
    res = cfg.get("dataset", {}).get("resolution", [256, 256])
    if not (isinstance(res, (list, tuple)) and len(res) == 2):
        raise ConfigError(f"dataset.resolution must be [height, width], got {res!r}")
    return (int(res[0]), int(res[1]))


def _model_spec(cfg, resolution):
    section = dict(cfg.get("model", {}))
    section.setdefault("input_size", list(resolution))
    defaults = ModelSpec()
    try:
        return ModelSpec(
            input_size=tuple(section["input_size"]),
            levels=int(section.get("levels", defaults.levels)),
            channel_plan=tuple(section.get("channel_plan", defaults.channel_plan)),
            kernel=int(section.get("kernel", defaults.kernel)),
            skip_connections=bool(section.get("skip_connections", defaults.skip_connections)),
            dropout_schedule=tuple(section.get("dropout_schedule", defaults.dropout_schedule)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad model section: {exc}")


def _train_config(cfg, seed):
    section = cfg.get("train", {})
    defaults = TrainConfig()
    try:
        return TrainConfig(
            epochs=int(section.get("epochs", defaults.epochs)),
            batch_size=int(section.get("batch_size", defaults.batch_size)),
            lr=float(section.get("lr", defaults.lr)),
            lr_decay_factor=float(section.get("lr_decay_factor", defaults.lr_decay_factor)),
            plateau_patience=int(section.get("plateau_patience", defaults.plateau_patience)),
            min_improvement_db=float(
                section.get("min_improvement_db", defaults.min_improvement_db)
            ),
            val_fraction=float(section.get("val_fraction", defaults.val_fraction)),
            corruption=_corruption_spec(cfg),
            seed=seed,
            grad_clip=float(section.get("grad_clip", defaults.grad_clip)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad train section: {exc}")


def _synth_spec(cfg):
    section = cfg.get("dataset", {}).get("synthetic")
    if section is None:
        return None
    defect_cfg = section.get("defect", {"kind": "stain"})
    try:
        defect = CorruptionSpec(
            kind=defect_cfg.get("kind", "stain"),
            gaussian_sigma=defect_cfg.get("gaussian_sigma"),
        )
        res = section.get("resolution", cfg.get("dataset", {}).get("resolution", [256, 256]))
        return SyntheticDatasetSpec(
            generator=section.get("generator", "checker"),
            n_train=int(section.get("n_train", 200)),
            n_test_clean=int(section.get("n_test_clean", 20)),
            n_test_defective=int(section.get("n_test_defective", 20)),
            resolution=(int(res[0]), int(res[1])),
            defect=defect,
        )
    except ValueError as exc:
        raise ConfigError(f"bad dataset.synthetic section: {exc}")


def _resolve_index(cfg, args, seed, out_dir) -> DatasetIndex:
    ds = cfg.get("dataset", {})
    synth = _synth_spec(cfg)
    if synth is not None:
        root = ds.get("root") or str(out_dir / "data")
        return make_synthetic(synth, root, seed)
    root = ds.get("root") or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise ConfigError(
            f"dataset.root missing (set it in the config or export {DATA_ROOT_ENV})"
        )
    category = ds.get("category")
    if not category:
        raise ConfigError("dataset.category missing")
    if not Path(root).is_dir():
        raise DataError(f"dataset root is not a directory: {root}")
    return scan_mvtec(root, category, _resolution(cfg))


def _detect_params(cfg):
    section = cfg.get("detect", {})
    p = section.get("p", 2)
    passes = int(section.get("passes", 30))
    if passes < 1:
        raise ConfigError("detect.passes must be >= 1")
    if p < 1:
        raise ConfigError("detect.p must be >= 1")
    return p, passes


# ---- subcommands ----


def cmd_corrupt(args):
    cfg = _load_config(args.config)
    seed = _seed_of(cfg, args)
    out_dir = _output_dir(cfg, args)
    spec = _corruption_spec(cfg)
    n = args.n if args.n is not None else 16
    if n < 1:
        raise ConfigError("--n must be >= 1")
    resolution = _resolution(cfg)

    sources = None
    if "root" in cfg.get("dataset", {}) or "synthetic" in cfg.get("dataset", {}):
        index = _resolve_index(cfg, args, seed, out_dir)
        sources = [index.train_paths[i % len(index.train_paths)] for i in range(n)]

    prefix = config_hash({"cmd": "corrupt", "spec": spec, "seed": seed, "n": n,
                          "resolution": resolution})

    def one(i):
        r = rngmod.stream(seed, rngmod.PREVIEW, i)
        if sources is None:
            img = GrayImage(np.full(resolution, 0.5, dtype=np.float32))
        else:
            img = load_image(sources[i], resolution)
        sample = corrupt(img, spec, r)
        img_path = out_dir / f"{prefix}_corrupt_{i:04d}.png"
        mask_path = out_dir / f"{prefix}_corrupt_{i:04d}_mask.png"
        _save_png8(sample.input, img_path)
        _save_png1(sample.mask, mask_path)
        return {
            "file": img_path.name,
            "mask": mask_path.name,
            "applied": sample.applied,
        }

    if args.jobs and args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            entries = list(pool.map(one, range(n)))
    else:
        entries = [one(i) for i in range(n)]

    manifest = out_dir / f"{prefix}_corrupt_manifest.json"
    with open(manifest, "w") as fh:
        json.dump({"seed": seed, "kind": spec.kind, "n": n, "items": entries},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {n} corrupted pairs under {out_dir} (prefix {prefix})")
    return 0


def cmd_synth_data(args):
    cfg = _load_config(args.config)
    seed = _seed_of(cfg, args)
    out_dir = _output_dir(cfg, args)
    synth = _synth_spec(cfg)
    if synth is None:
        raise ConfigError("config needs a dataset.synthetic section for synth-data")
    root = cfg.get("dataset", {}).get("root") or str(out_dir / "data")
    index = make_synthetic(synth, root, seed)
    print(f"synthetic dataset '{index.category}' at {Path(root) / index.category} "
          f"({len(index.train_paths)} train / {len(index.test_items)} test)")
    return 0


def cmd_train(args):
    cfg = _load_config(args.config)
    seed = _seed_of(cfg, args)
    out_dir = _output_dir(cfg, args)
    index = _resolve_index(cfg, args, seed, out_dir)
    spec = _model_spec(cfg, index.resolution)
    tcfg = _train_config(cfg, seed)

    if args.resume:
        ckpt_path = Path(args.resume)
        if not ckpt_path.is_file():
            raise ConfigError(f"--resume checkpoint not found: {ckpt_path}")
        net, payload = load_checkpoint(ckpt_path)
        if _spec_dict(net.spec) != _spec_dict(spec):
            raise ConfigError(
                "checkpoint/model mismatch: the checkpoint architecture differs "
                "from the config's model section"
            )
        prepare_resume(net, payload)
    else:
        net = build(spec, seed)

    net, history = train(net, index, tcfg, out_dir=out_dir, log=_progress)
    last = history.rows[-1] if history.rows else None
    if last is not None:
        print(f"done: {last.epoch} epochs, train mse {last.mse:.3g}, "
              f"val psnr {last.psnr_db:.2f} dB, best {history.best_psnr_db:.2f} dB "
              f"(epoch {history.best_epoch})")
    return 0


def cmd_evaluate(args):
    cfg = _load_config(args.config)
    seed = _seed_of(cfg, args)
    out_dir = _output_dir(cfg, args)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt_path}")
    net, payload = load_checkpoint(ckpt_path)
    if "model" in cfg:
        want = _model_spec(cfg, tuple(net.spec.input_size))
        if _spec_dict(want) != _spec_dict(net.spec):
            raise ConfigError(
                "checkpoint/model mismatch: config's model section does not "
                "describe the checkpoint architecture"
            )
    index = _resolve_index(cfg, args, seed, out_dir)
    if tuple(index.resolution) != tuple(net.spec.input_size):
        raise ConfigError(
            f"dataset resolution {index.resolution} does not match the network "
            f"input size {tuple(net.spec.input_size)}"
        )
    strategy = args.strategy or "both"
    strategies = list(STRATEGIES) if strategy == "both" else [strategy]
    p, passes = _detect_params(cfg)

    results = evaluate_index(net, index, strategies=strategies, p=p, seed=seed, passes=passes)
    prefix = config_hash({"cmd": "evaluate", "checkpoint": str(ckpt_path),
                          "category": index.category, "strategies": strategies,
                          "p": p, "passes": passes, "seed": seed})

    cells = {name: roc.auc for name, roc in results.items()}
    row = CategoryResult(index.category, category_group(index.category), cells)
    with open(out_dir / f"{prefix}_row_{index.category}.json", "w") as fh:
        json.dump({"category": row.category, "group": row.group, "cells": row.cells},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")

    report = EvalReport([row])
    text = render_report(report, out_dir, prefix=prefix)
    for name, roc in results.items():
        save_roc_png(roc, out_dir / f"{prefix}_roc_{name}.png",
                     title=f"{index.category} {name}: AUC {roc.auc:.4f}")
    _save_previews(net, index, strategies, seed, passes, out_dir, prefix)
    print(text, end="")
    return 0


def _save_previews(net, index, strategies, seed, passes, out_dir, prefix, limit=4):
    maps_dir = out_dir / f"{prefix}_maps"
    shown = 0
    for k, item in enumerate(index.test_items):
        if not item.is_defective and shown:
            continue  # previews favor defective items; keep the first clean one
        image = load_image(item.path, index.resolution)
        mask = load_mask(item.mask_path, index.resolution) if item.is_defective else None
        for s in strategies:
            if s == "residual":
                amap = residual_map(net, image, source=str(item.path))
            else:
                amap = uncertainty_map(net, image, passes=passes,
                                       rng=rngmod.stream(seed, rngmod.EVAL, k),
                                       source=str(item.path))
            stem = maps_dir / f"{item.defect_type}_{Path(item.path).stem}_{s}"
            save_map(amap, stem, meta={"checkpoint_prefix": prefix})
            save_preview_panel(image, amap, mask,
                               stem.with_name(stem.name + "_panel.png"),
                               title=f"{index.category}/{item.defect_type}")
        shown += 1
        if shown >= limit:
            break


def cmd_report(args):
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"--run-dir is not a directory: {run_dir}")
    rows = []
    for path in sorted(run_dir.glob("*_row_*.json")):
        with open(path) as fh:
            data = json.load(fh)
        rows.append(CategoryResult(data["category"], data["group"], data["cells"]))
    if not rows:
        raise DataError(f"no evaluation rows (*_row_*.json) under {run_dir}")
    # one row per category: keep the newest file for duplicates
    dedup = {}
    for row in rows:
        dedup[row.category] = row
    report = EvalReport(sorted(dedup.values(), key=lambda r: r.category))
    prefix = config_hash({"cmd": "report", "categories": sorted(dedup)})
    text = render_report(report, run_dir, prefix=prefix)
    print(text, end="")
    return 0


# ---- helpers ----


def _save_png8(px, path):
    from PIL import Image

    Image.fromarray(np.round(px * 255.0).astype(np.uint8), mode="L").save(path)


def _save_png1(mask, path):
    from PIL import Image

    Image.fromarray(mask).convert("1").save(path)


def _progress(row):
    if row.epoch == 1 or row.epoch % 25 == 0:
        psnr_txt = "-" if math.isnan(row.psnr_db) else f"{row.psnr_db:.2f} dB"
        print(f"epoch {row.epoch:4d}  mse {row.mse:.4g}  val psnr {psnr_txt}  "
              f"lr {row.lr:g}", flush=True)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="stainad",
        description="corrupt-and-reconstruct anomaly detection toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON run config")
        p.add_argument("--seed", type=int, default=None,
                       help="root seed (overrides the config)")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers where safe")

    p = sub.add_parser("corrupt", help="write corrupted preview pairs + manifest")
    common(p)
    p.add_argument("--n", type=int, default=None, help="number of previews (default 16)")
    p.set_defaults(fn=cmd_corrupt)

    p = sub.add_parser("synth-data", help="materialize a synthetic dataset")
    common(p)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", help="train a model per the config")
    common(p)
    p.add_argument("--resume", default=None, help="final checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file to evaluate")
    p.add_argument("--strategy", choices=["residual", "uncertainty", "both"],
                   default=None, help="detection route (default both)")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("report", help="aggregate evaluation rows into one table")
    p.add_argument("--run-dir", required=True, help="directory holding *_row_*.json files")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
