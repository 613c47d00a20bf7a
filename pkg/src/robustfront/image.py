"""8-bit raster with a per-pixel validity mask."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WHITE = 255
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Image:
    """Grayscale ``(H, W)`` or RGB ``(H, W, 3)`` uint8 pixels plus a bool mask.

    Invalid (masked-out) pixels are stored as white so that a saved image
    shows occluded regions the way they are usually displayed.
    """

    pixels: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] != 3):
            raise ValueError(f"pixels must be (H, W) or (H, W, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must have positive width and height")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.integer) and (px.min() < 0 or px.max() > 255):
                raise ValueError("pixel values must fit in 8 bits")
            px = np.clip(np.rint(px), 0, 255) if np.issubdtype(px.dtype, np.floating) else px
        px = np.array(px, dtype=np.uint8)
        if self.mask is None:
            mask = np.ones(px.shape[:2], dtype=bool)
        else:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != px.shape[:2]:
                raise ValueError("mask shape must match the image height and width")
        px[~mask] = WHITE
        px.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    def gray(self) -> np.ndarray:
        """Float intensities; RGB is converted with the Rec. 601 luma weights."""
        if self.channels == 1:
            return self.pixels.astype(float)
        return self.pixels.astype(float) @ LUMA

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels) and np.array_equal(self.mask, other.mask)

    __hash__ = None
