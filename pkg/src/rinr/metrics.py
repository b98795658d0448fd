"""Reconstruction quality: PSNR over normalized pixels (peak = 1.0)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .image import ImageBuffer


@dataclass(frozen=True)
class PsnrReport:
    mse: float
    psnr_db: float  # math.inf when the buffers are identical

    def __str__(self) -> str:
        return "inf" if math.isinf(self.psnr_db) else f"{self.psnr_db:.4f}"


def psnr(a: ImageBuffer, b: ImageBuffer, quantized: bool = False) -> PsnrReport:
    """PSNR between two same-sized buffers.

    By default both buffers are compared as normalized floats (this is the
    variant the encoder's prune schedule consumes).  With ``quantized=True``
    both sides are rounded through 8 bits first, giving file-level numbers.
    """
    if (a.h, a.w) != (b.h, b.w):
        raise InvalidInputError(f"dimension mismatch: {a.h}x{a.w} vs {b.h}x{b.w}")
    if quantized:
        pa = a.as_u8().astype(np.float64) / 255.0
        pb = b.as_u8().astype(np.float64) / 255.0
    else:
        pa = a.as_float(np.float64)
        pb = b.as_float(np.float64)
    mse = float(np.mean((pa - pb) ** 2))
    if mse == 0.0:
        return PsnrReport(0.0, math.inf)
    return PsnrReport(mse, 10.0 * math.log10(1.0 / mse))
