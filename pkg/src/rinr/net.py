"""Sine-activated coordinate MLP: shapes, init, forward pass, gradients, Adam.

A model maps normalized pixel coordinates (x, y) in [0, 1] to RGB values.
Hidden layers compute sin(omega * (W @ a + b)); the final layer is affine.
Everything here is plain numpy over value types, so evaluation is safe to run
concurrently across images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import InvalidInputError, NumericError

if TYPE_CHECKING:
    from .compressor import QuantInfo

DEFAULT_OMEGA = 30.0


@dataclass(frozen=True)
class Architecture:
    """MLP shape: layer widths (input and output included) plus sine frequency.

    ``dims`` always starts at 2 (x, y) and ends at 3 (R, G, B).  "N layers"
    counts weight matrices, so dims [2, 15, 15, 3] is a 3-layer network with
    two hidden layers of width 15.
    """

    dims: tuple[int, ...]
    omega: float = DEFAULT_OMEGA

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) < 2:
            raise InvalidInputError("architecture needs at least one weight matrix")
        if self.dims[0] != 2:
            raise InvalidInputError(f"input width must be 2 (x, y), got {self.dims[0]}")
        if self.dims[-1] != 3:
            raise InvalidInputError(f"output width must be 3 (R, G, B), got {self.dims[-1]}")
        if any(d < 1 for d in self.dims):
            raise InvalidInputError(f"every layer width must be >= 1, got {self.dims}")
        if not (self.omega > 0):
            raise InvalidInputError(f"omega must be positive, got {self.omega}")

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @staticmethod
    def uniform(n_layers: int, hidden: int, omega: float = DEFAULT_OMEGA) -> "Architecture":
        """Uniform architecture: ``n_layers`` weight matrices, equal hidden widths."""
        if n_layers < 1:
            raise InvalidInputError("n_layers must be >= 1")
        return Architecture((2, *([hidden] * (n_layers - 1)), 3), omega)


def param_count(arch: Architecture) -> int:
    """Total scalar parameters: sum over layers of in*out weights plus out biases."""
    return sum(i * o + o for i, o in zip(arch.dims[:-1], arch.dims[1:]))


def weight_count(arch: Architecture) -> int:
    """Weight-matrix entries only; biases are exempt from pruning/quantization."""
    return sum(i * o for i, o in zip(arch.dims[:-1], arch.dims[1:]))


@dataclass
class LayerWeights:
    """One layer's parameters: w is (out, in), b is (out,)."""

    w: np.ndarray
    b: np.ndarray

    def copy(self) -> "LayerWeights":
        return LayerWeights(self.w.copy(), self.b.copy())


@dataclass
class InrModel:
    """A trained (or training) per-image network.

    ``mask`` mirrors each weight matrix; False entries are pruned and their
    weights are kept exactly 0.  ``quant`` is attached by the compressor once
    hidden layers have been quantized.  ``source_h``/``source_w`` remember the
    raster the model was fit to and are only used as decode defaults.
    """

    arch: Architecture
    layers: list[LayerWeights]
    mask: list[np.ndarray]
    source_h: int = 0
    source_w: int = 0
    quant: "QuantInfo | None" = None

    def copy(self) -> "InrModel":
        return InrModel(
            arch=self.arch,
            layers=[l.copy() for l in self.layers],
            mask=[m.copy() for m in self.mask],
            source_h=self.source_h,
            source_w=self.source_w,
            quant=self.quant,
        )

    @property
    def nnz(self) -> int:
        """Unpruned weight entries (biases not counted)."""
        return int(sum(m.sum() for m in self.mask))

    @property
    def prune_ratio(self) -> float:
        """Fraction of weight entries pruned; biases excluded from the denominator."""
        wc = weight_count(self.arch)
        return 1.0 - self.nnz / wc


def validate_model(model: InrModel) -> None:
    """Raise FormatError if layer/mask shapes disagree with the architecture."""
    from .errors import FormatError

    dims = model.arch.dims
    if len(model.layers) != len(dims) - 1 or len(model.mask) != len(dims) - 1:
        raise FormatError(
            f"expected {len(dims) - 1} layers, got {len(model.layers)} layers / {len(model.mask)} masks"
        )
    for i, (lw, m) in enumerate(zip(model.layers, model.mask)):
        want = (dims[i + 1], dims[i])
        if lw.w.shape != want or m.shape != want:
            raise FormatError(f"layer {i}: weight shape {lw.w.shape}, mask {m.shape}, expected {want}")
        if lw.b.shape != (dims[i + 1],):
            raise FormatError(f"layer {i}: bias shape {lw.b.shape}, expected ({dims[i + 1]},)")


def coordinate_grid(h: int, w: int, dtype=np.float32) -> np.ndarray:
    """Row-major (h*w, 2) grid of (x, y) pairs covering an h x w raster.

    Pixel (r, c) maps to (c/(w-1), r/(h-1)) with inclusive endpoints; an axis
    of length 1 maps to coordinate 0.
    """
    if h < 1 or w < 1:
        raise InvalidInputError(f"grid dimensions must be >= 1, got {h}x{w}")
    xs = np.linspace(0.0, 1.0, w, dtype=np.float64) if w > 1 else np.zeros(1)
    ys = np.linspace(0.0, 1.0, h, dtype=np.float64) if h > 1 else np.zeros(1)
    gx, gy = np.meshgrid(xs, ys)  # row-major: y varies over rows
    return np.stack([gx.ravel(), gy.ravel()], axis=1).astype(dtype)


def init(arch: Architecture, seed: int, dtype=np.float32) -> InrModel:
    """Fresh model with the standard init for sine networks.

    First layer weights are U(-1/in, 1/in); later layers U(+-sqrt(6/in)/omega),
    which cancels the omega factor applied in the forward pass.  Biases start
    at 0 and the mask is all ones.  Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    layers: list[LayerWeights] = []
    mask: list[np.ndarray] = []
    for li, (fan_in, fan_out) in enumerate(zip(arch.dims[:-1], arch.dims[1:])):
        if li == 0:
            bound = 1.0 / fan_in
        else:
            bound = np.sqrt(6.0 / fan_in) / arch.omega
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        layers.append(LayerWeights(w, b))
        mask.append(np.ones((fan_out, fan_in), dtype=bool))
    return InrModel(arch=arch, layers=layers, mask=mask)


def _check_coords(model: InrModel, coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords)
    if coords.ndim != 2 or coords.shape[1] != model.arch.dims[0]:
        raise InvalidInputError(
            f"coords must be (n, {model.arch.dims[0]}), got {coords.shape}"
        )
    return coords


def _forward_trace(model: InrModel, coords: np.ndarray):
    """Forward pass keeping pre-activations for backprop.

    Returns (zs, acts) where acts[0] is the input and acts[-1] the output.
    Hidden layers may be stored in float16; math is done in the activation
    dtype (float32 unless the caller passed float64 coords).
    """
    omega = model.arch.omega
    a = coords
    zs: list[np.ndarray] = []
    acts: list[np.ndarray] = [a]
    last = len(model.layers) - 1
    for i, lw in enumerate(model.layers):
        w = lw.w if lw.w.dtype == a.dtype else lw.w.astype(a.dtype)
        b = lw.b if lw.b.dtype == a.dtype else lw.b.astype(a.dtype)
        z = a @ w.T + b
        zs.append(z)
        a = z if i == last else np.sin(omega * z)
        acts.append(a)
    return zs, acts


def forward(model: InrModel, coords: np.ndarray) -> np.ndarray:
    """Evaluate the network on an (n, 2) coordinate array; returns raw (n, 3).

    Output values are unclamped; the decoder owns clamping to [0, 1].
    """
    coords = _check_coords(model, coords)
    if coords.dtype not in (np.float32, np.float64):
        coords = coords.astype(np.float32)
    _, acts = _forward_trace(model, coords)
    return acts[-1]


def loss_and_grad(
    model: InrModel,
    coords: np.ndarray,
    targets: np.ndarray,
    reduction: str = "mean",
) -> tuple[float, list[LayerWeights]]:
    """MSE loss and analytic gradients via backprop through the sine layers.

    ``reduction="mean"`` divides the summed squared error by the number of
    values (3n), which is what the published learning rates are tuned for;
    ``"sum"`` leaves the raw sum.  Gradient entries under a pruned mask are
    forced to exactly 0.
    """
    coords = _check_coords(model, coords)
    targets = np.asarray(targets)
    if targets.shape != (coords.shape[0], model.arch.dims[-1]):
        raise InvalidInputError(
            f"targets must be {(coords.shape[0], model.arch.dims[-1])}, got {targets.shape}"
        )
    if not (np.isfinite(coords).all() and np.isfinite(targets).all()):
        raise NumericError("coords/targets contain non-finite values")
    if reduction not in ("mean", "sum"):
        raise InvalidInputError(f"unknown reduction {reduction!r}")

    dtype = coords.dtype if coords.dtype in (np.float32, np.float64) else np.float32
    coords = coords.astype(dtype, copy=False)
    targets = targets.astype(dtype, copy=False)

    omega = model.arch.omega
    zs, acts = _forward_trace(model, coords)
    resid = acts[-1] - targets
    scale = 1.0 / resid.size if reduction == "mean" else 1.0
    loss = float((resid.astype(np.float64) ** 2).sum() * scale)

    grads: list[LayerWeights] = [None] * len(model.layers)  # type: ignore[list-item]
    delta = (2.0 * scale) * resid  # d loss / d z_last (final layer is affine)
    for i in range(len(model.layers) - 1, -1, -1):
        gw = delta.T @ acts[i]
        gb = delta.sum(axis=0)
        np.multiply(gw, model.mask[i], out=gw)
        grads[i] = LayerWeights(gw, gb)
        if i > 0:
            w = model.layers[i].w.astype(dtype, copy=False)
            delta = (delta @ w) * (omega * np.cos(omega * zs[i - 1]))
    return loss, grads


class Adam:
    """Plain Adam over a model's layer parameters.

    Moments live per layer; ``step`` mutates the model in place and re-applies
    the pruning mask so masked weights stay exactly 0 on every trajectory.
    """

    def __init__(self, model: InrModel, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [LayerWeights(np.zeros_like(l.w), np.zeros_like(l.b)) for l in model.layers]
        self.v = [LayerWeights(np.zeros_like(l.w), np.zeros_like(l.b)) for l in model.layers]

    def step(self, model: InrModel, grads: list[LayerWeights], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for layer, mask, g, m, v in zip(model.layers, model.mask, grads, self.m, self.v):
            for name in ("w", "b"):
                p = getattr(layer, name)
                gp = getattr(g, name).astype(p.dtype, copy=False)
                mp = getattr(m, name)
                vp = getattr(v, name)
                mp *= self.beta1
                mp += (1.0 - self.beta1) * gp
                vp *= self.beta2
                vp += (1.0 - self.beta2) * gp * gp
                p -= lr * (mp / c1) / (np.sqrt(vp / c2) + self.eps)
            np.multiply(layer.w, mask, out=layer.w)


def adam_step(model: InrModel, state: Adam, grads: list[LayerWeights], lr: float) -> InrModel:
    """One optimizer step; returns the (mutated) model for convenience."""
    state.step(model, grads, lr)
    return model
