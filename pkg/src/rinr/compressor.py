"""Model compression: magnitude pruning and layer-wise affine quantization.

Pruning is unstructured over weight magnitudes; ratios are *total* zero
fractions over all weight-matrix entries (biases are never pruned).  The
dynamic schedule maps reconstruction PSNR to a target ratio through a named
piecewise-linear curve.  Quantization touches hidden layers only: first and
last layers keep full precision, matching their wide, off-center weight
distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidInputError, NumericError, StructuralError
from .net import InrModel, weight_count


@dataclass(frozen=True)
class PruneSchedule:
    """Piecewise-linear PSNR -> total prune ratio map with saturation.

    ``pieces`` are (psnr_lo, psnr_hi, slope, intercept) segments; ``below``
    and ``above`` are the saturation ratios outside the covered PSNR range.
    """

    name: str
    below: float
    pieces: tuple[tuple[float, float, float, float], ...]
    above: float


# 32x32-class images saturate at 25% zeros; larger images at 40%.
SCHEDULES: dict[str, PruneSchedule] = {
    "cifar": PruneSchedule("cifar", below=0.0, pieces=((30.0, 35.0, 0.05, -1.5),), above=0.25),
    "large": PruneSchedule("large", below=0.2, pieces=((35.0, 40.0, 0.04, -1.2),), above=0.4),
}


def get_schedule(name: str) -> PruneSchedule:
    try:
        return SCHEDULES[name]
    except KeyError:
        raise InvalidInputError(f"unknown schedule {name!r}; have {sorted(SCHEDULES)}") from None


def dynamic_ratio(schedule: PruneSchedule, psnr: float) -> float:
    """Target total prune ratio for a given reconstruction PSNR (dB).

    Infinite PSNR saturates high (a perfect reconstruction tolerates the
    maximum prune); NaN is rejected.
    """
    if math.isnan(psnr):
        raise InvalidInputError("psnr is NaN")
    if psnr == math.inf:
        return schedule.above
    for lo, hi, slope, intercept in schedule.pieces:
        if psnr < lo:
            break
        if psnr <= hi:
            return slope * psnr + intercept
    return schedule.below if psnr < schedule.pieces[0][0] else schedule.above


@dataclass(frozen=True)
class LayerQuant:
    """Affine mapping for one quantized layer: value = scale * (code - zero_point).

    ``constant`` marks a degenerate range (max == min over kept weights); such
    layers record scale 1 and keep their weights exact instead of storing codes.
    """

    bits: int
    scale: float
    zero_point: int
    constant: bool = False


@dataclass(frozen=True)
class QuantInfo:
    """Per-model quantization metadata; only hidden layers appear in ``layers``."""

    mode: str  # "affine8" | "affine16"
    layers: dict[int, LayerQuant] = field(default_factory=dict)

    @property
    def quantized_layers(self) -> set[int]:
        return set(self.layers)


_MODE_BITS = {"affine8": 8, "affine16": 16}


def quant_mode(model: InrModel) -> str:
    return model.quant.mode if model.quant is not None else "none"


def _sorted_weight_order(model: InrModel) -> tuple[np.ndarray, int]:
    """Indices of all weight entries sorted by |w| ascending, ties broken by
    (layer, row, col) position; returns (order, total entries)."""
    mags = np.concatenate([np.abs(l.w.ravel()).astype(np.float64) for l in model.layers])
    order = np.argsort(mags, kind="stable")
    return order, mags.size


def prune_l1(model: InrModel, total_ratio: float, scope: str = "global") -> InrModel:
    """Magnitude-prune to a *total* zero fraction over weight entries.

    Already-zero entries count toward the budget, so repruning at an equal or
    lower ratio is a no-op; pruning never resurrects a masked weight.
    ``scope="global"`` ranks magnitudes across all weight matrices jointly
    (the default); ``"per_layer"`` applies the ratio within each matrix.
    """
    if not (0.0 <= total_ratio < 1.0):
        raise InvalidInputError(f"total_ratio must be in [0, 1), got {total_ratio}")
    if scope not in ("global", "per_layer"):
        raise InvalidInputError(f"unknown scope {scope!r}")

    out = model.copy()
    if scope == "global":
        order, n = _sorted_weight_order(model)
        k = int(math.floor(total_ratio * n + 0.5))
        doomed = order[:k]
        flat_masks = np.concatenate([m.ravel() for m in out.mask]).copy()
        flat_masks[doomed] = False
        offset = 0
        for lw, m in zip(out.layers, out.mask):
            sz = m.size
            new_m = flat_masks[offset : offset + sz].reshape(m.shape) & m.ravel().reshape(m.shape)
            offset += sz
            if not new_m.any():
                raise StructuralError(
                    f"ratio {total_ratio} would zero an entire layer ({m.shape[0]}x{m.shape[1]})"
                )
            m[...] = new_m
            np.multiply(lw.w, m, out=lw.w)
    else:
        for lw, m in zip(out.layers, out.mask):
            mags = np.abs(lw.w.ravel()).astype(np.float64)
            k = int(math.floor(total_ratio * mags.size + 0.5))
            doomed = np.argsort(mags, kind="stable")[:k]
            new_m = m.ravel().copy()
            new_m[doomed] = False
            new_m = new_m.reshape(m.shape)
            if not new_m.any():
                raise StructuralError(f"ratio {total_ratio} would zero an entire layer")
            m[...] = new_m
            np.multiply(lw.w, m, out=lw.w)
    return out


def hidden_layer_indices(model: InrModel) -> range:
    """Layers eligible for quantization: everything but the first and last."""
    return range(1, len(model.layers) - 1)


def quantize(model: InrModel, mode: str) -> InrModel:
    """Layer-wise post-training quantization of hidden-layer weights.

    Kept weights are snapped to the affine grid scale * (q - zero_point) with
    scale = (max - min) / (2^bits - 1) over the layer's kept entries; pruned
    entries remain exactly 0 via the mask.  First/last layers and all biases
    are untouched.  A degenerate layer (max == min) keeps its constant exact.
    """
    if mode not in _MODE_BITS:
        raise InvalidInputError(f"mode must be one of {sorted(_MODE_BITS)}, got {mode!r}")
    if model.quant is not None:
        raise FormatError(f"model already quantized ({model.quant.mode})")
    for i, lw in enumerate(model.layers):
        if not (np.isfinite(lw.w).all() and np.isfinite(lw.b).all()):
            raise NumericError(f"layer {i} contains non-finite weights")

    bits = _MODE_BITS[mode]
    qmax = (1 << bits) - 1
    out = model.copy()
    layer_info: dict[int, LayerQuant] = {}
    for i in hidden_layer_indices(model):
        lw = out.layers[i]
        mask = out.mask[i]
        kept = lw.w[mask].astype(np.float64)
        if kept.size == 0:
            layer_info[i] = LayerQuant(bits, 1.0, 0, constant=True)
            continue
        mn, mx = float(kept.min()), float(kept.max())
        if mx == mn:
            layer_info[i] = LayerQuant(bits, 1.0, 0, constant=True)
            continue
        scale = (mx - mn) / qmax
        zp = int(np.round(-mn / scale))
        if not (-(1 << 31) <= zp < (1 << 31)):
            # Range so degenerate relative to its offset that codes carry no
            # information; keep the layer exact like the constant case.
            layer_info[i] = LayerQuant(bits, 1.0, 0, constant=True)
            continue
        codes = np.clip(np.round(lw.w.astype(np.float64) / scale) + zp, 0, qmax)
        w = (scale * (codes - zp)).astype(lw.w.dtype)
        np.multiply(w, mask, out=w)
        lw.w = w
        layer_info[i] = LayerQuant(bits, scale, zp)
    out.quant = QuantInfo(mode, layer_info)
    return out


def quantize_codes(model: InrModel, layer: int) -> np.ndarray:
    """Unsigned integer codes for a quantized layer (pruned entries code to
    zero_point, which dequantizes to exactly 0)."""
    if model.quant is None or layer not in model.quant.layers:
        raise FormatError(f"layer {layer} is not quantized")
    lq = model.quant.layers[layer]
    if lq.constant:
        raise FormatError(f"layer {layer} is a constant layer; it stores no codes")
    qmax = (1 << lq.bits) - 1
    w = model.layers[layer].w.astype(np.float64)
    codes = np.clip(np.round(w / lq.scale) + lq.zero_point, 0, qmax)
    return codes.astype(np.uint8 if lq.bits == 8 else np.uint16)


def dequantize(model: InrModel) -> InrModel:
    """Full-precision model; inverse of :func:`quantize` up to the grid snap.

    Unquantized models pass through unchanged (mode "none" is the identity).
    Malformed quantization metadata raises FormatError.
    """
    if model.quant is None:
        return model
    hidden = set(hidden_layer_indices(model))
    extra = model.quant.quantized_layers - hidden
    if extra:
        raise FormatError(f"quantized_layers {sorted(extra)} are not hidden layers")
    out = model.copy()
    out.quant = None
    return out


def to_half(model: InrModel) -> InrModel:
    """Cast all weight matrices to float16 (a cheap 2x dense alternative to
    affine16); biases stay float32 and masked zeros stay exact."""
    if model.quant is not None:
        raise FormatError("cast before quantizing, not after")
    out = model.copy()
    for lw in out.layers:
        lw.w = lw.w.astype(np.float16)
    return out


def weight_histogram(model: InrModel, layer: int, bins: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Normalized histogram (counts summing to 1, bin edges) of one layer's
    weight entries over uniform bins spanning the layer's range."""
    if not (0 <= layer < len(model.layers)):
        raise InvalidInputError(f"layer {layer} out of range [0, {len(model.layers)})")
    w = model.layers[layer].w.ravel().astype(np.float64)
    lo, hi = float(w.min()), float(w.max())
    if lo == hi:
        return np.array([1.0]), np.array([lo, hi])
    counts, edges = np.histogram(w, bins=bins, range=(lo, hi))
    return counts / counts.sum(), edges
