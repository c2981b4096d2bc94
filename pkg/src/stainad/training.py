"""Training loop: corrupt-on-the-fly pairs, Adam, PSNR-plateau LR halving.

Each epoch corrupts every training image afresh from its (epoch, image)
stream; the loss is plain MSE against the CLEAN image over the full frame (no
mask weighting). A fixed 20% validation split -- corrupted once, with streams
that never change -- is scored by PSNR after every epoch, and the learning
rate halves whenever the best validation PSNR stalls for 30 straight epochs.
No data augmentation of any kind is applied, and the dropout schedule stays
inactive here: dropout belongs to MCDropout inference, not to training.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import rng as rngmod
from .corruption import CorruptionSpec, corrupt
from .dataset import DatasetIndex, load_image, validation_split
from .errors import TrainingDiverged
from .image import GrayImage
from .hashing import config_hash
from .model import save_checkpoint, _spec_dict

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
PSNR_CAP_DB = 99.0


# ---- metrics ----


def psnr(reference, reconstruction=None) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images.

    Accepts either two images/arrays or a precomputed MSE (single argument).
    Identical inputs (MSE 0) return the 99 dB cap.
    """
    if reconstruction is None:
        mse = float(reference)
    else:
        a = np.asarray(getattr(reference, "pixels", reference), dtype=np.float64)
        b = np.asarray(getattr(reconstruction, "pixels", reconstruction), dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
        mse = float(np.mean((a - b) ** 2))
    if mse < 0:
        raise ValueError("MSE cannot be negative")
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


class PlateauLrSchedule:
    """Halve the lr after `patience` consecutive epochs without PSNR improvement.

    Improvement means beating the best value seen so far by more than
    `min_improvement` dB. The stall counter resets both on improvement and
    after a halving, so k halvings mean k completed plateaus:
    lr = lr0 * factor^k.
    """

    def __init__(self, lr0, factor=0.5, patience=30, min_improvement=0.01):
        self.lr = float(lr0)
        self.factor = float(factor)
        self.patience = int(patience)
        self.min_improvement = float(min_improvement)
        self.best = -math.inf
        self.stall = 0
        self.halvings = 0

    def update(self, psnr_db) -> bool:
        """Feed one epoch's validation PSNR; returns True if it improved."""
        if math.isnan(psnr_db):
            return False
        if psnr_db > self.best + self.min_improvement:
            self.best = psnr_db
            self.stall = 0
            return True
        self.stall += 1
        if self.stall >= self.patience:
            self.lr *= self.factor
            self.halvings += 1
            self.stall = 0
        return False

    def state_dict(self):
        return {
            "lr": self.lr,
            "best": self.best,
            "stall": self.stall,
            "halvings": self.halvings,
        }

    def load_state_dict(self, state):
        self.lr = state["lr"]
        self.best = state["best"]
        self.stall = state["stall"]
        self.halvings = state["halvings"]


# ---- config and history ----


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    batch_size: int = 16
    lr: float = 0.01
    lr_decay_factor: float = 0.5
    plateau_patience: int = 30
    min_improvement_db: float = 0.01
    val_fraction: float = 0.2
    corruption: CorruptionSpec = field(default_factory=lambda: CorruptionSpec("stain"))
    seed: int = 0
    grad_clip: float = 5.0  # global norm; <= 0 disables

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not (0.0 < self.lr):
            raise ValueError("lr must be positive")
        if not (0.0 < self.lr_decay_factor < 1.0):
            raise ValueError("lr_decay_factor must lie in (0, 1)")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class EpochStats:
    epoch: int
    mse: float
    psnr_db: float  # nan when there is no validation split
    lr: float


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    best_psnr_db: float = math.nan

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mse", "psnr_db", "lr"])
            for r in self.rows:
                writer.writerow([r.epoch, f"{r.mse:.10g}", f"{r.psnr_db:.6g}", f"{r.lr:.10g}"])


def run_hash(model_spec, cfg: TrainConfig, category) -> str:
    """Hash identifying a run; prefixes every artifact filename."""
    return config_hash(
        {
            "model": _spec_dict(model_spec),
            "train": cfg,
            "category": str(category),
        }
    )


# ---- the loop ----


def _corrupt_to_pair(img, spec, stream):
    s = corrupt(img, spec, stream)
    return s.input, s.target


def train(net, index: DatasetIndex, cfg: TrainConfig, out_dir=None, log=None):
    """Train `net` on the index's training images; returns (net, history).

    When out_dir is given, writes `<hash>_best.pt` / `<hash>_final.pt`
    checkpoints, `<hash>_history.csv`, and a `<hash>_config.json` sidecar.
    """
    images = [load_image(p, index.resolution) for p in index.train_paths]
    train_idx, val_idx = validation_split(index.train_paths, cfg.seed, cfg.val_fraction)
    if not train_idx:
        raise ValueError("validation split left no training images")

    # validation pairs are corrupted once, from per-image streams that do not
    # depend on the epoch, so every epoch scores the same degradations
    val_pairs = []
    for i in val_idx:
        s = corrupt(images[i], cfg.corruption, rngmod.stream(cfg.seed, rngmod.VAL_CORRUPT, i))
        val_pairs.append((s.input, s.target))

    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=ADAM_BETAS, eps=ADAM_EPS)
    sched = PlateauLrSchedule(
        cfg.lr, cfg.lr_decay_factor, cfg.plateau_patience, cfg.min_improvement_db
    )
    history = TrainHistory()
    start_epoch = 1

    resume = getattr(net, "_resume_state", None)
    if resume is not None:
        opt.load_state_dict(resume["optimizer"])
        sched.load_state_dict(resume["plateau"])
        start_epoch = resume["epoch"] + 1
        history.rows = [EpochStats(**r) for r in resume["history_rows"]]
        history.best_epoch = resume["best_epoch"]
        history.best_psnr_db = resume["best_psnr_db"]
        del net._resume_state

    prefix = run_hash(net.spec, cfg, index.category)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"{prefix}_config.json", "w") as fh:
            json.dump(
                {
                    "model": _spec_dict(net.spec),
                    "train": {
                        "epochs": cfg.epochs,
                        "batch_size": cfg.batch_size,
                        "lr": cfg.lr,
                        "lr_decay_factor": cfg.lr_decay_factor,
                        "plateau_patience": cfg.plateau_patience,
                        "min_improvement_db": cfg.min_improvement_db,
                        "val_fraction": cfg.val_fraction,
                        "corruption": {
                            "kind": cfg.corruption.kind,
                            "gaussian_sigma": cfg.corruption.gaussian_sigma,
                        },
                        "seed": cfg.seed,
                        "grad_clip": cfg.grad_clip,
                    },
                    "dataset": {
                        "category": index.category,
                        "resolution": list(index.resolution),
                        "n_train": len(index.train_paths),
                    },
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")

    loss_fn = torch.nn.MSELoss()
    for epoch in range(start_epoch, cfg.epochs + 1):
        order = rngmod.stream(cfg.seed, rngmod.SHUFFLE, epoch).permutation(train_idx)
        for g in opt.param_groups:
            g["lr"] = sched.lr
        epoch_sq_err = 0.0
        for b0 in range(0, len(order), cfg.batch_size):
            batch = order[b0 : b0 + cfg.batch_size]
            pairs = [
                _corrupt_to_pair(
                    images[i],
                    cfg.corruption,
                    rngmod.stream(cfg.seed, rngmod.TRAIN_CORRUPT, epoch, i),
                )
                for i in batch
            ]
            x = torch.from_numpy(np.stack([p[0] for p in pairs])[:, None])
            y = torch.from_numpy(np.stack([p[1] for p in pairs])[:, None])
            opt.zero_grad()
            recon = net(x)
            loss = loss_fn(recon, y)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size}, "
                    f"lr {sched.lr:g}",
                    epoch=epoch,
                    batch=b0 // cfg.batch_size,
                    lr=sched.lr,
                )
            loss.backward()
            if cfg.grad_clip and cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
            opt.step()
            epoch_sq_err += float(loss.detach()) * len(batch)
        train_mse = epoch_sq_err / len(order)

        val_psnr = math.nan
        if val_pairs:
            with torch.no_grad():
                vals = []
                for vx, vy in val_pairs:
                    out = net(torch.from_numpy(vx)[None, None])[0, 0].numpy()
                    vals.append(psnr(vy, out))
            val_psnr = float(np.mean(vals))

        lr_this_epoch = sched.lr  # halving, if any, takes effect next epoch
        improved = sched.update(val_psnr)
        history.rows.append(EpochStats(epoch, train_mse, val_psnr, lr_this_epoch))
        if improved:
            history.best_epoch = epoch
            history.best_psnr_db = val_psnr
            if out_dir is not None:
                save_checkpoint(
                    net,
                    out_dir / f"{prefix}_best.pt",
                    extra=_train_meta(cfg, index, epoch, sched, history),
                )
        if log:
            log(history.rows[-1])

    if out_dir is not None:
        save_checkpoint(
            net,
            out_dir / f"{prefix}_final.pt",
            extra={
                **_train_meta(cfg, index, len(history.rows) and history.rows[-1].epoch, sched, history),
                "optimizer": opt.state_dict(),
                "history_rows": [vars(r) for r in history.rows],
            },
        )
        history.write_csv(out_dir / f"{prefix}_history.csv")
    return net, history


def _train_meta(cfg, index, epoch, sched, history):
    return {
        "train_config": {
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "lr": cfg.lr,
            "lr_decay_factor": cfg.lr_decay_factor,
            "plateau_patience": cfg.plateau_patience,
            "min_improvement_db": cfg.min_improvement_db,
            "val_fraction": cfg.val_fraction,
            "corruption": {
                "kind": cfg.corruption.kind,
                "gaussian_sigma": cfg.corruption.gaussian_sigma,
            },
            "seed": cfg.seed,
            "grad_clip": cfg.grad_clip,
        },
        "dataset": {"category": index.category, "resolution": list(index.resolution)},
        "epoch": int(epoch),
        "plateau": sched.state_dict(),
        "best_epoch": history.best_epoch,
        "best_psnr_db": history.best_psnr_db,
    }


def prepare_resume(net, payload):
    """Arm `net` so the next train() call continues from a final checkpoint."""
    needed = {"optimizer", "plateau", "epoch", "history_rows", "best_epoch", "best_psnr_db"}
    missing = needed - set(payload)
    if missing:
        raise ValueError(f"checkpoint lacks resume state: {sorted(missing)}")
    net._resume_state = {k: payload[k] for k in needed}
    return net
