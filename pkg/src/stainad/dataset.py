"""Dataset plumbing: folder scanning, image loading, synthetic data generation.

Understands the industrial-inspection folder convention::

    <category>/train/good/*.png
    <category>/test/<defect_type>/*.png
    <category>/ground_truth/<defect_type>/<stem>_mask.png

and can fabricate small deterministic datasets in the same layout for
development and end-to-end checks.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree

from . import rng as rngmod
from .corruption import CorruptionSpec, corrupt
from .errors import DataError
from .image import GrayImage

IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
TEXTURE_CATEGORIES = frozenset({"carpet", "grid", "leather", "tile", "wood"})
GENERATORS = ("checker", "stripes", "blobs")

# per-image defect pixel fraction accepted by the synthetic injector
INJECT_FRAC_LO = 1e-4
INJECT_FRAC_HI = 0.06


# ---- index types ----


@dataclass(frozen=True)
class TestItem:
    __test__ = False  # not a pytest case, despite the name

    path: Path
    defect_type: str          # "good" for clean items
    mask_path: Path | None    # None exactly when defect_type == "good"

    @property
    def is_defective(self) -> bool:
        return self.defect_type != "good"


@dataclass(frozen=True)
class DatasetIndex:
    root: Path
    category: str
    train_paths: tuple
    test_items: tuple
    resolution: tuple = (256, 256)

    def __post_init__(self):
        if not self.train_paths:
            raise DataError(f"category {self.category!r}: no training images")
        for item in self.test_items:
            if item.is_defective and item.mask_path is None:
                raise DataError(f"defective test item without mask: {item.path}")


# ---- loading ----


def load_image(path, resolution=(256, 256)) -> GrayImage:
    """Load any common image file as a GrayImage at the index resolution.

    Color inputs are reduced with ITU-R 601 luma weights; everything is
    bilinearly resized to (height, width) without preserving aspect ratio and
    scaled from 8-bit to [0, 1].
    """
    try:
        with Image.open(path) as im:
            if im.mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr"):
                arr = np.asarray(im.convert("RGB"), dtype=np.float32)
                gray = arr @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
            else:
                gray = np.asarray(im.convert("L"), dtype=np.float32)
    except FileNotFoundError:
        raise DataError(f"image file not found: {path}")
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}")
    h, w = resolution
    resized = Image.fromarray(gray, mode="F").resize((w, h), Image.BILINEAR)
    px = np.clip(np.asarray(resized, dtype=np.float32) / 255.0, 0.0, 1.0)
    return GrayImage(px)


def load_mask(path, resolution=(256, 256)) -> np.ndarray:
    """Load a ground-truth mask, resize, and binarize at 0.5. Returns bool."""
    try:
        with Image.open(path) as im:
            gray = np.asarray(im.convert("L"), dtype=np.float32)
    except FileNotFoundError:
        raise DataError(f"mask file not found: {path}")
    h, w = resolution
    resized = Image.fromarray(gray, mode="F").resize((w, h), Image.BILINEAR)
    return np.asarray(resized, dtype=np.float32) / 255.0 >= 0.5


def _list_images(folder: Path):
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_EXTS)


def scan_mvtec(root, category, resolution=(256, 256)) -> DatasetIndex:
    """Index one category of an MVTec-style tree without loading pixels."""
    root = Path(root)
    cat_dir = root / category
    train_dir = cat_dir / "train" / "good"
    test_dir = cat_dir / "test"
    if not train_dir.is_dir():
        raise DataError(
            f"unrecognized dataset layout: expected {train_dir} to be a directory"
        )
    train_paths = tuple(_list_images(train_dir))
    if not train_paths:
        raise DataError(f"no training images under {train_dir}")

    items = []
    if test_dir.is_dir():
        for type_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
            defect_type = type_dir.name
            for img_path in _list_images(type_dir):
                if defect_type == "good":
                    items.append(TestItem(img_path, "good", None))
                    continue
                gt_dir = cat_dir / "ground_truth" / defect_type
                matches = sorted(gt_dir.glob(img_path.stem + "_mask*")) if gt_dir.is_dir() else []
                if not matches:
                    raise DataError(
                        f"no ground-truth mask for test image {img_path.stem!r} "
                        f"(looked in {gt_dir})"
                    )
                items.append(TestItem(img_path, defect_type, matches[0]))
    return DatasetIndex(root, category, train_paths, tuple(items), tuple(resolution))


# ---- validation split ----


def validation_split(paths, seed, fraction=0.2):
    """Deterministic split: shuffle under the run seed, take the tail as val.

    Returns (train, val) index lists into `paths`. With fewer than five items
    the validation side is empty.
    """
    n = len(paths)
    perm = rngmod.stream(seed, rngmod.SPLIT).permutation(n)
    n_val = int(math.floor(fraction * n))
    if n_val == 0:
        return list(perm), []
    return list(perm[:-n_val]), list(perm[-n_val:])


# ---- synthetic data ----


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    """Recipe for a small procedurally generated inspection dataset."""

    generator: str = "checker"      # checker | stripes | blobs
    n_train: int = 200
    n_test_clean: int = 20
    n_test_defective: int = 20
    resolution: tuple = (256, 256)
    defect: CorruptionSpec = field(default_factory=lambda: CorruptionSpec("stain"))

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}, expected one of {GENERATORS}")
        if self.n_train < 1:
            raise ValueError("n_train must be >= 1")
        if self.n_test_clean < 0 or self.n_test_defective < 0:
            raise ValueError("test counts must be >= 0")
        if self.defect.kind == "none":
            raise ValueError("defect spec must actually corrupt (kind != 'none')")


def _texture_checker(rng, h, w):
    """Rigid square lattice of flat tiles, each with its own uniform gray tone.

    Tile side is fixed at one eighth of the short image side (only the lattice
    phase and the tone draws vary between images), so the family is
    statistically homogeneous. Continuous tones make copying the only way to
    reproduce a tile's interior, while the lattice itself is strictly regular,
    so geometry violations (a flat patch straddling tile borders) remain
    learnable.
    """
    cell = max(4, round(min(h, w) / 8))
    oy = int(rng.integers(cell))
    ox = int(rng.integers(cell))
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ci = (ii + oy) // cell
    cj = (jj + ox) // cell
    tones = rng.uniform(0.0, 1.0, size=(int(ci.max()) + 1, int(cj.max()) + 1))
    return tones[ci, cj].astype(np.float32)


def _texture_stripes(rng, h, w):
    # 1.5-4 cycles per side keeps every wavelength >= ~10 px: renderable from
    # a half-resolution skip tap, so reconstruction quality is content-limited
    # rather than architecture-limited
    cycles = rng.uniform(1.5, 4.0)
    ang = rng.uniform(0.0, math.pi)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    lo = rng.uniform(0.15, 0.40)
    hi = rng.uniform(0.60, 0.85)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    u = (ii * math.cos(ang) + jj * math.sin(ang)) / min(h, w)
    wave = np.sin(2.0 * math.pi * cycles * u + phase)
    return (lo + (hi - lo) * (wave + 1.0) / 2.0).astype(np.float32)


def _texture_blobs(rng, h, w):
    """Mosaic of flat-toned convex patches (nearest-seed cells, jittered grid).

    Every pixel takes the tone of its nearest seed point; seeds sit on a
    regular grid perturbed by up to ±0.45 cells, so patch sizes stay uniform
    while the layout is irregular. Per-patch tones span the full gray range.
    """
    spacing = max(4, round(min(h, w) / 12))
    gy = np.arange(spacing / 2.0, h, spacing)
    gx = np.arange(spacing / 2.0, w, spacing)
    cy, cx = np.meshgrid(gy, gx, indexing="ij")
    seeds = np.stack([cy.ravel(), cx.ravel()], axis=1)
    seeds = seeds + rng.uniform(-0.45, 0.45, size=seeds.shape) * spacing
    tones = rng.uniform(0.0, 1.0, size=len(seeds)).astype(np.float32)
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    pix = np.stack([ii.ravel(), jj.ravel()], axis=1)
    _, label = cKDTree(seeds).query(pix, k=1)
    return tones[label].reshape(h, w)


_TEXTURES = {"checker": _texture_checker, "stripes": _texture_stripes, "blobs": _texture_blobs}


def _save_gray_png(px, path):
    Image.fromarray(np.round(px * 255.0).astype(np.uint8), mode="L").save(path)


def _save_mask_png(mask, path):
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def _inject_defect(img: GrayImage, spec: CorruptionSpec, rng):
    """Corrupt, resampling until the defect covers a sane pixel fraction.

    Guards against degenerate injections (a stain clipped to a sliver at the
    frame corner, or one blanketing the frame). Full-frame models such as
    gaussian are exempt since their mask is the whole image by definition.
    """
    sample = corrupt(img, spec, rng)
    if sample.mask.all():
        return sample
    npx = sample.mask.size
    for _ in range(100):
        frac = sample.mask.sum() / npx
        if INJECT_FRAC_LO <= frac <= INJECT_FRAC_HI:
            return sample
        sample = corrupt(img, spec, rng)
    raise DataError(f"defect injection failed to land in [{INJECT_FRAC_LO}, {INJECT_FRAC_HI}]")


def make_synthetic(spec: SyntheticDatasetSpec, out_dir, seed) -> DatasetIndex:
    """Materialize a synthetic dataset on disk and return its index.

    The same (spec, seed) always writes byte-identical files, so regeneration
    is safe. Layout matches scan_mvtec; a manifest.json records the recipe and
    every file with its role.
    """
    out_dir = Path(out_dir)
    h, w = spec.resolution
    texture = _TEXTURES[spec.generator]
    cat_dir = out_dir / spec.generator
    train_dir = cat_dir / "train" / "good"
    test_good = cat_dir / "test" / "good"
    test_bad = cat_dir / "test" / "defect"
    gt_dir = cat_dir / "ground_truth" / "defect"
    for folder in (train_dir, test_good, test_bad, gt_dir):
        folder.mkdir(parents=True, exist_ok=True)

    manifest = {
        "seed": int(seed),
        "generator": spec.generator,
        "resolution": [h, w],
        "defect": {"kind": spec.defect.kind, "gaussian_sigma": spec.defect.gaussian_sigma},
        "train": [],
        "test": [],
    }

    counter = 0
    train_paths = []
    for i in range(spec.n_train):
        r = rngmod.stream(seed, rngmod.SYNTH, counter)
        counter += 1
        path = train_dir / f"{i:04d}.png"
        _save_gray_png(texture(r, h, w), path)
        train_paths.append(path)
        manifest["train"].append(str(path.relative_to(out_dir)))

    items = []
    for i in range(spec.n_test_clean):
        r = rngmod.stream(seed, rngmod.SYNTH, counter)
        counter += 1
        path = test_good / f"{i:04d}.png"
        _save_gray_png(texture(r, h, w), path)
        items.append(TestItem(path, "good", None))
        manifest["test"].append({"path": str(path.relative_to(out_dir)), "defect_type": "good"})

    for i in range(spec.n_test_defective):
        r = rngmod.stream(seed, rngmod.SYNTH, counter)
        counter += 1
        base = GrayImage(texture(r, h, w))
        sample = _inject_defect(base, spec.defect, r)
        path = test_bad / f"{i:04d}.png"
        mask_path = gt_dir / f"{i:04d}_mask.png"
        _save_gray_png(sample.input, path)
        _save_mask_png(sample.mask, mask_path)
        items.append(TestItem(path, "defect", mask_path))
        manifest["test"].append(
            {
                "path": str(path.relative_to(out_dir)),
                "defect_type": "defect",
                "mask": str(mask_path.relative_to(out_dir)),
                "applied": sample.applied,
            }
        )

    with open(cat_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return DatasetIndex(
        out_dir, spec.generator, tuple(train_paths), tuple(items), (h, w)
    )
