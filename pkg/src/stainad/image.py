"""Grayscale image container shared by every module."""

from dataclasses import dataclass

import numpy as np

MIN_SIDE = 16


@dataclass(frozen=True)
class GrayImage:
    """Single-channel float32 image, intensities in [0, 1], >= 16 px per side.

    The wrapped array is treated as immutable: operations that alter pixels
    always copy first.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"expected a 2-d array, got shape {px.shape}")
        if px.shape[0] < MIN_SIDE or px.shape[1] < MIN_SIDE:
            raise ValueError(
                f"image {px.shape[0]}x{px.shape[1]} too small, need at least "
                f"{MIN_SIDE} px per side"
            )
        px = px.astype(np.float32, copy=False)
        if not np.isfinite(px).all():
            raise ValueError("image contains non-finite values")
        lo, hi = float(px.min()), float(px.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensities outside [0, 1]: min={lo:g} max={hi:g}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self):
        return self.pixels.shape
