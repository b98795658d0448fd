"""Reconstruct images from models at any requested resolution.

Decoding is read-only over models, deterministic bit-for-bit regardless of
parallelism level, and independent of the training resolution: the source
size is only a default.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import compressor, net
from .errors import BatchItemError, InvalidInputError
from .image import ImageBuffer


def decode(model: net.InrModel, out_h: int | None = None, out_w: int | None = None) -> ImageBuffer:
    """Evaluate the model on an out_h x out_w grid and clamp to [0, 1].

    Defaults to the model's source resolution.  Quantized models are
    dequantized first, so decoding a quantized model and decoding its
    dequantized form run the same code path.
    """
    out_h = model.source_h if out_h is None else out_h
    out_w = model.source_w if out_w is None else out_w
    if out_h < 1 or out_w < 1:
        raise InvalidInputError(f"output size must be >= 1x1, got {out_h}x{out_w}")
    net.validate_model(model)
    if model.quant is not None:
        model = compressor.dequantize(model)
    coords = net.coordinate_grid(out_h, out_w, dtype=np.float32)
    rgb = net.forward(model, coords)
    rgb = np.clip(rgb, 0.0, 1.0).reshape(out_h, out_w, 3)
    return ImageBuffer(rgb)


def decode_batch(
    models: list[net.InrModel],
    out_h: int | None = None,
    out_w: int | None = None,
    parallelism: int = 1,
) -> list[ImageBuffer]:
    """Decode a slice of models, order-preserving and bit-identical to a
    sequential decode; a per-model failure is reported with its index."""
    if not models:
        raise InvalidInputError("empty model slice")
    if parallelism < 1:
        raise InvalidInputError(f"parallelism must be >= 1, got {parallelism}")

    def one(i: int) -> ImageBuffer:
        try:
            return decode(models[i], out_h, out_w)
        except Exception as e:  # noqa: BLE001 - re-raised with the index
            raise BatchItemError(i, e) from e

    if parallelism == 1 or len(models) == 1:
        return [one(i) for i in range(len(models))]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, range(len(models))))
