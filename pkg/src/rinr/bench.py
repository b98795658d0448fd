"""Decode throughput harness over a .rinr archive.

Stage breakdown (load / dequantize / forward / clamp+convert) is measured in
a sequential pass; throughput comes from a parallel batched pass.  Outputs
are digested so callers can assert identical pixels across runs while
timings vary.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import archive, net
from .errors import InvalidInputError


@dataclass
class BenchReport:
    images: int
    pixels: int
    batch: int
    jobs: int
    stage_seconds: dict[str, float] = field(default_factory=dict)
    wall_seconds: float = 0.0
    images_per_s: float = 0.0
    pixels_per_s: float = 0.0
    digest: str = ""  # sha256 over all decoded 8-bit pixels, order-preserving


def bench(source, batch: int = 8, jobs: int = 1, out_h: int | None = None, out_w: int | None = None) -> BenchReport:
    """Measure decode performance of every record in an archive."""
    if batch < 1 or jobs < 1:
        raise InvalidInputError("batch and jobs must be >= 1")

    stages = {"load": 0.0, "dequantize": 0.0, "forward": 0.0, "clamp_convert": 0.0}
    grids: dict[tuple[int, int], np.ndarray] = {}
    hasher = hashlib.sha256()
    total_pixels = 0

    with archive.ArchiveReader(source) as reader:
        n = len(reader)
        raws = []
        t0 = time.perf_counter()
        for k in range(n):
            raws.append(reader.read_raw(k))
        stages["load"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        models = [archive.materialize(raw).model for raw in raws]
        stages["dequantize"] = time.perf_counter() - t0

        outputs = []
        for model in models:
            h = out_h or model.source_h
            w = out_w or model.source_w
            key = (h, w)
            if key not in grids:
                grids[key] = net.coordinate_grid(h, w, dtype=np.float32)
            t0 = time.perf_counter()
            rgb = net.forward(model, grids[key])
            stages["forward"] += time.perf_counter() - t0
            t0 = time.perf_counter()
            u8 = np.floor(np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
            stages["clamp_convert"] += time.perf_counter() - t0
            outputs.append(u8.reshape(h, w, 3))
            total_pixels += h * w

        for u8 in outputs:
            hasher.update(u8.tobytes())

        # Throughput pass: batched parallel decode over the already-loaded models.
        from .decoder import decode_batch

        t0 = time.perf_counter()
        for start in range(0, n, batch):
            decode_batch(models[start : start + batch], out_h, out_w, parallelism=jobs)
        wall = time.perf_counter() - t0

    return BenchReport(
        images=n,
        pixels=total_pixels,
        batch=batch,
        jobs=jobs,
        stage_seconds=stages,
        wall_seconds=wall,
        images_per_s=n / wall if wall > 0 else float("inf"),
        pixels_per_s=total_pixels / wall if wall > 0 else float("inf"),
        digest=hasher.hexdigest(),
    )
