"""Anomaly maps and scores from a trained reconstruction network.

Two detection routes: the residual map |x - reconstruction| from a single
deterministic pass, and the uncertainty map, the per-pixel population variance
across repeated dropout-active passes (MCDropout). Maps are used raw -- no
morphological cleanup or smoothing is ever applied.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image import GrayImage
from .model import forward, mc_forward

MAP_KINDS = ("residual", "uncertainty")
DEFAULT_PASSES = 30


@dataclass(frozen=True)
class AnomalyMap:
    """Non-negative per-pixel anomaly evidence."""

    values: np.ndarray  # (h, w) float32, >= 0
    kind: str           # "residual" | "uncertainty"
    source: str = ""    # free-form provenance (input path, checkpoint hash...)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError(f"expected a 2-d map, got shape {v.shape}")
        if self.kind not in MAP_KINDS:
            raise ValueError(f"kind must be one of {MAP_KINDS}, got {self.kind!r}")
        if v.size and float(v.min()) < 0.0:
            raise ValueError("anomaly maps are non-negative by construction")
        object.__setattr__(self, "values", v)


def residual_map(net, image: GrayImage, source="") -> AnomalyMap:
    """Absolute reconstruction error from a dropout-free forward pass."""
    recon = forward(net, image)
    return AnomalyMap(np.abs(image.pixels - recon.pixels), "residual", source)


def uncertainty_map(net, image: GrayImage, passes=DEFAULT_PASSES, rng=None, source="") -> AnomalyMap:
    """Per-pixel variance over `passes` dropout-active reconstructions.

    Population variance (divide by N). With an all-zero dropout schedule the
    passes coincide and the map is exactly zero: the stack is centered on its
    first pass before the moment computation, so identical passes cancel
    exactly instead of leaving float summation dust.
    """
    stack = mc_forward(net, image, passes=passes, rng=rng)
    centered = stack.astype(np.float64)
    centered -= centered[0]
    var = np.var(centered, axis=0).astype(np.float32)
    return AnomalyMap(var, "uncertainty", source)


# ---- scoring ----


def image_score(amap: AnomalyMap, p=2) -> float:
    """Collapse a map to one number via the p-norm (sum v^p) ** (1/p)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    v = amap.values.astype(np.float64)
    if not np.isfinite(v).all():
        raise ValueError("anomaly map contains non-finite values")
    if v.min() < 0:
        raise ValueError("anomaly map contains negative values")
    total = float((v**p).sum())
    return total ** (1.0 / p)


def pixel_scores(amap: AnomalyMap):
    """Flatten a map to [(score, (row, col)), ...] in row-major order."""
    h, w = amap.values.shape
    flat = amap.values.ravel()
    return [(float(flat[k]), (k // w, k % w)) for k in range(flat.size)]


# ---- persistence ----


def save_map(amap: AnomalyMap, stem, meta=None):
    """Write <stem>.f32 (raw little-endian float32, row-major), <stem>.json
    (header) and <stem>.png (8-bit min-max preview)."""
    from PIL import Image

    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    v = amap.values.astype("<f4")
    v.tofile(stem.with_suffix(".f32"))
    header = {
        "dtype": "float32-le",
        "height": int(v.shape[0]),
        "width": int(v.shape[1]),
        "kind": amap.kind,
        "source": amap.source,
    }
    if meta:
        header["meta"] = meta
    with open(stem.with_suffix(".json"), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        preview = np.round((v - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        preview = np.zeros(v.shape, dtype=np.uint8)
    Image.fromarray(preview, mode="L").save(stem.with_suffix(".png"))


def load_map(stem):
    """Read a map written by save_map; exact float32 round trip.

    Returns (AnomalyMap, header dict).
    """
    stem = Path(stem)
    with open(stem.with_suffix(".json")) as fh:
        header = json.load(fh)
    if header.get("dtype") != "float32-le":
        raise ValueError(f"unsupported map dtype {header.get('dtype')!r}")
    v = np.fromfile(stem.with_suffix(".f32"), dtype="<f4")
    v = v.reshape(header["height"], header["width"])
    return AnomalyMap(v, header["kind"], header.get("source", "")), header
