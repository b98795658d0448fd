"""rinr: a per-image coordinate-MLP image codec.

Each image is overfit by its own small sine-activated MLP; the weights are
pruned, quantized and packed into a compact binary archive from which images
decode at any resolution.
"""

from .archive import ArchiveReader, ArchiveRecord, DatasetArchive, read, stats, write
from .compressor import (
    SCHEDULES,
    PruneSchedule,
    QuantInfo,
    dequantize,
    dynamic_ratio,
    get_schedule,
    prune_l1,
    quantize,
    weight_histogram,
)
from .decoder import decode, decode_batch
from .encoder import EncodeConfig, EncodeReport, encode_dataset, fit_full, fit_round1
from .image import ImageBuffer
from .metrics import PsnrReport, psnr
from .net import Architecture, InrModel, LayerWeights, forward, init, param_count
from .nas import enumerate_architectures, sweep

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "ArchiveReader",
    "ArchiveRecord",
    "DatasetArchive",
    "EncodeConfig",
    "EncodeReport",
    "ImageBuffer",
    "InrModel",
    "LayerWeights",
    "PruneSchedule",
    "PsnrReport",
    "QuantInfo",
    "SCHEDULES",
    "decode",
    "decode_batch",
    "dequantize",
    "dynamic_ratio",
    "encode_dataset",
    "enumerate_architectures",
    "fit_full",
    "fit_round1",
    "forward",
    "get_schedule",
    "init",
    "param_count",
    "prune_l1",
    "psnr",
    "quantize",
    "read",
    "stats",
    "sweep",
    "weight_histogram",
    "write",
]
