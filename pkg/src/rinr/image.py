"""H x W x 3 pixel buffers with normalized-value semantics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class ImageBuffer:
    """Row-major H x W x 3 raster, stored either as float in [0, 1] or uint8."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidInputError(f"pixels must be (H, W, 3) with H,W >= 1, got {px.shape}")
        if px.dtype == np.uint8:
            self.pixels = px
        elif np.issubdtype(px.dtype, np.floating):
            if px.size and (px.min() < 0.0 or px.max() > 1.0):
                raise InvalidInputError("normalized pixels must lie in [0, 1]")
            self.pixels = px
        else:
            raise InvalidInputError(f"unsupported pixel dtype {px.dtype}")

    @property
    def h(self) -> int:
        return self.pixels.shape[0]

    @property
    def w(self) -> int:
        return self.pixels.shape[1]

    @staticmethod
    def from_u8(pixels: np.ndarray) -> "ImageBuffer":
        return ImageBuffer(np.asarray(pixels, dtype=np.uint8))

    def as_float(self, dtype=np.float32) -> np.ndarray:
        """Normalized view: uint8 is divided by 255."""
        if self.pixels.dtype == np.uint8:
            return (self.pixels / np.array(255.0, dtype=dtype)).astype(dtype)
        return self.pixels.astype(dtype, copy=False)

    def as_u8(self) -> np.ndarray:
        """8-bit view using round-half-away-from-zero, so PSNR on the 8-bit
        path is reproducible across platforms."""
        if self.pixels.dtype == np.uint8:
            return self.pixels
        v = np.clip(self.pixels, 0.0, 1.0)
        return np.floor(v * 255.0 + 0.5).astype(np.uint8)
