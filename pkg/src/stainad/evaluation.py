"""ROC/AUC evaluation, image-wise and pixel-wise, plus report rendering.

The ROC curve is traced exactly over the distinct score values; tied scores
collapse into one threshold step, so trapezoidal integration reproduces the
Mann-Whitney statistic (discordant pairs plus half the ties). Pixel-wise
evaluation pools every pixel of the ENTIRE test set -- clean images contribute
all-negative pixels -- rather than averaging per-image AUCs.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .dataset import DatasetIndex, TEXTURE_CATEGORIES, load_image, load_mask
from .detection import DEFAULT_PASSES, image_score, residual_map, uncertainty_map

STRATEGIES = ("residual", "uncertainty")
CELLS = ("image_residual", "image_uncertainty", "pixel_residual", "pixel_uncertainty")


@dataclass(frozen=True)
class RocResult:
    auc: float
    points: np.ndarray  # (k, 2) of (fpr, tpr), from (0, 0) to (1, 1)
    n_positive: int
    n_negative: int


def roc_auc(scores, labels) -> RocResult:
    """Exact ROC/AUC for binary labels; higher scores mean more anomalous.

    Thresholds sweep the distinct score values from high to low; ties move the
    curve diagonally, and the trapezoidal area equals the probability that a
    random positive outranks a random negative, counting ties as half.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.shape} vs {y.shape}")
    if s.size == 0:
        raise ValueError("empty score list")
    if not np.isfinite(s).all():
        raise ValueError("scores contain non-finite values")
    uniq = np.unique(y)
    if not np.isin(uniq, (0, 1)).all():
        raise ValueError(f"labels must be 0/1, got values {uniq}")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative")

    order = np.argsort(-s)
    s_sorted = s[order]
    y_sorted = y[order] == 1
    # indices where a run of tied scores ends
    ends = np.nonzero(np.diff(s_sorted))[0]
    ends = np.concatenate([ends, [s.size - 1]])
    tp = np.cumsum(y_sorted)[ends]
    fp = (ends + 1) - tp
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    auc = float(np.trapezoid(tpr, fpr))
    return RocResult(auc, np.stack([fpr, tpr], axis=1), n_pos, n_neg)


# ---- per-category evaluation ----


def evaluate_image_wise(net, index: DatasetIndex, strategy="residual", p=2, seed=0,
                        passes=DEFAULT_PASSES) -> RocResult:
    """One score per test image (map p-norm), clean-vs-defective ROC/AUC."""
    _check_strategy(strategy)
    scores, labels = [], []
    for k, item in enumerate(index.test_items):
        image = load_image(item.path, index.resolution)
        amap = _make_map(net, image, strategy, seed, k, passes, str(item.path))
        scores.append(image_score(amap, p=p))
        labels.append(1 if item.is_defective else 0)
    return roc_auc(scores, labels)


def evaluate_pixel_wise(net, index: DatasetIndex, strategy="residual", seed=0,
                        passes=DEFAULT_PASSES) -> RocResult:
    """Pooled per-pixel ROC/AUC across the whole test set.

    Ground-truth masks label defective pixels positive; every pixel of every
    clean image is a negative.
    """
    _check_strategy(strategy)
    scores, labels = [], []
    for k, item in enumerate(index.test_items):
        image = load_image(item.path, index.resolution)
        amap = _make_map(net, image, strategy, seed, k, passes, str(item.path))
        scores.append(amap.values.ravel().astype(np.float64))
        if item.is_defective:
            labels.append(load_mask(item.mask_path, index.resolution).ravel().astype(np.uint8))
        else:
            labels.append(np.zeros(amap.values.size, dtype=np.uint8))
    return roc_auc(np.concatenate(scores), np.concatenate(labels))


def evaluate_index(net, index: DatasetIndex, strategies=STRATEGIES, p=2, seed=0,
                   passes=DEFAULT_PASSES):
    """Image- and pixel-wise AUC for each strategy, one shared map pass.

    Returns {"image_residual": RocResult, ...} with keys limited to the
    requested strategies.
    """
    for s in strategies:
        _check_strategy(s)
    img_scores = {s: [] for s in strategies}
    img_labels = []
    px_scores = {s: [] for s in strategies}
    px_labels = []
    for k, item in enumerate(index.test_items):
        image = load_image(item.path, index.resolution)
        label = 1 if item.is_defective else 0
        img_labels.append(label)
        if item.is_defective:
            mask = load_mask(item.mask_path, index.resolution).ravel().astype(np.uint8)
        else:
            mask = np.zeros(image.pixels.size, dtype=np.uint8)
        px_labels.append(mask)
        for s in strategies:
            amap = _make_map(net, image, s, seed, k, passes, str(item.path))
            img_scores[s].append(image_score(amap, p=p))
            px_scores[s].append(amap.values.ravel().astype(np.float64))
    out = {}
    for s in strategies:
        out[f"image_{s}"] = roc_auc(img_scores[s], img_labels)
        out[f"pixel_{s}"] = roc_auc(np.concatenate(px_scores[s]), np.concatenate(px_labels))
    return out


def _check_strategy(strategy):
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")


def _make_map(net, image, strategy, seed, item_index, passes, source):
    if strategy == "residual":
        return residual_map(net, image, source=source)
    return uncertainty_map(
        net, image, passes=passes, rng=rngmod.stream(seed, rngmod.EVAL, item_index), source=source
    )


# ---- reporting ----


@dataclass
class CategoryResult:
    category: str
    group: str  # "texture" | "object"
    cells: dict  # cell name -> AUC (missing cells allowed)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def mean_rows(self):
        """(label, cells) tuples for texture-mean / object-mean / global-mean."""
        out = []
        for label, member in (
            ("texture-mean", [r for r in self.rows if r.group == "texture"]),
            ("object-mean", [r for r in self.rows if r.group == "object"]),
            ("global-mean", list(self.rows)),
        ):
            if not member:
                continue
            cells = {}
            for cell in CELLS:
                vals = [r.cells[cell] for r in member if cell in r.cells]
                if vals:
                    cells[cell] = float(np.mean(vals))
            out.append((label, cells))
        return out


def category_group(category) -> str:
    return "texture" if category in TEXTURE_CATEGORIES else "object"


def render_report(report: EvalReport, out_dir=None, prefix="eval"):
    """Render the AUC table; optionally writes <prefix>_report.csv/.txt.

    Returns the aligned text table as a string.
    """
    labels = [(r.category, r.cells) for r in report.rows] + report.mean_rows()
    headers = ["category"] + list(CELLS)
    table_rows = []
    for name, cells in labels:
        table_rows.append([name] + [_fmt(cells.get(c)) for c in CELLS])
    widths = [max(len(h), *(len(r[i]) for r in table_rows)) if table_rows else len(h)
              for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for r in table_rows:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(headers))))
    text = "\n".join(lines) + "\n"

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"{prefix}_report.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(headers)
            for name, cells in labels:
                writer.writerow([name] + [
                    f"{cells[c]:.6f}" if c in cells else "" for c in CELLS
                ])
        with open(out_dir / f"{prefix}_report.txt", "w") as fh:
            fh.write(text)
    return text


def _fmt(v):
    return "" if v is None else f"{v:.4f}"


def save_roc_png(roc: RocResult, path, title=""):
    """Plot one ROC curve to a PNG (headless backend)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(roc.points[:, 0], roc.points[:, 1], lw=1.8)
    ax.plot([0, 1], [0, 1], "k--", lw=0.8, alpha=0.5)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title or f"AUC = {roc.auc:.4f}")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_preview_panel(image, amap, mask, path, title=""):
    """Input / anomaly map / ground truth side by side, for eyeballing runs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cols = 3 if mask is not None else 2
    fig, axes = plt.subplots(1, cols, figsize=(3 * cols, 3.2))
    axes[0].imshow(image.pixels, cmap="gray", vmin=0, vmax=1)
    axes[0].set_title("input")
    axes[1].imshow(amap.values, cmap="inferno")
    axes[1].set_title(amap.kind)
    if mask is not None:
        axes[2].imshow(mask, cmap="gray")
        axes[2].set_title("ground truth")
    for ax in axes:
        ax.axis("off")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
