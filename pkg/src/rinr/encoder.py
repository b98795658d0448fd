"""Per-image fit pipeline: overfit, iterative prune + retrain, dynamic prune.

Round 1 overfits a fresh model to the image.  Round 2 (skippable for small
images) prunes 20% of the weights by global magnitude and retrains under the
fixed mask at a smaller learning rate.  Round 3 looks up a *total* prune
ratio from the image's current PSNR, prunes up to it, and retrains again.
Every round restarts cosine learning-rate decay from its configured peak.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import compressor, decoder, metrics, net
from .errors import InvalidInputError, TrainingError
from .image import ImageBuffer

log = logging.getLogger(__name__)


def cosine_lr(lr0: float, t: int, total: int) -> float:
    """Cosine decay from lr0 at t=0 to exactly 0 at t=total."""
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * t / total))


@dataclass(frozen=True)
class EncodeConfig:
    arch: net.Architecture
    round1_lr: float = 5e-4
    round1_steps: int = 5000
    retrain_lr: float = 2e-4
    retrain_steps: int = 10000
    iterative_prune_ratio: float = 0.20
    skip_round2: bool = False
    schedule: str = "cifar"
    seed: int = 0

    def __post_init__(self):
        if self.round1_steps <= 0 or self.retrain_steps <= 0:
            raise InvalidInputError("step counts must be > 0")
        if self.round1_lr <= 0 or self.retrain_lr <= 0:
            raise InvalidInputError("learning rates must be > 0")
        if not (0.0 <= self.iterative_prune_ratio < 1.0):
            raise InvalidInputError("iterative_prune_ratio must be in [0, 1)")
        compressor.get_schedule(self.schedule)


@dataclass
class EncodeReport:
    """What one fit produced: PSNR after each round (dB), the PSNR right after
    each masking (before the recovery retrain), the total zero fraction over
    weight entries, sampled losses, and wall time in seconds."""

    psnr_after_round: list[float] = field(default_factory=list)
    psnr_after_mask: list[float] = field(default_factory=list)
    final_prune_ratio: float = 0.0
    loss_curve: list[float] = field(default_factory=list)
    wall_time: float = 0.0


def _train(
    model: net.InrModel,
    coords: np.ndarray,
    targets: np.ndarray,
    lr0: float,
    steps: int,
    curve: list[float],
) -> None:
    """Adam + cosine decay for `steps` full-batch steps, appending sampled
    losses to `curve`.  Raises TrainingError at the step where loss goes
    non-finite."""
    opt = net.Adam(model)
    stride = max(1, steps // 64)
    for t in range(steps):
        loss, grads = net.loss_and_grad(model, coords, targets)
        if not math.isfinite(loss):
            raise TrainingError(f"loss became non-finite at step {t}", step=t)
        if t % stride == 0:
            curve.append(loss)
        opt.step(model, grads, cosine_lr(lr0, t, steps))
    loss, _ = net.loss_and_grad(model, coords, targets)
    if not math.isfinite(loss):
        raise TrainingError(f"loss became non-finite at step {steps}", step=steps)
    curve.append(loss)


def _native_psnr(model: net.InrModel, image: ImageBuffer) -> float:
    return metrics.psnr(decoder.decode(model), image).psnr_db


def fit_round1(image: ImageBuffer, cfg: EncodeConfig) -> tuple[net.InrModel, EncodeReport]:
    """Overfit a dense model to one image (no pruning)."""
    start = time.perf_counter()
    coords = net.coordinate_grid(image.h, image.w, dtype=np.float32)
    targets = image.as_float(np.float32).reshape(-1, 3)
    model = net.init(cfg.arch, cfg.seed)
    model.source_h, model.source_w = image.h, image.w

    report = EncodeReport()
    _train(model, coords, targets, cfg.round1_lr, cfg.round1_steps, report.loss_curve)
    report.psnr_after_round.append(_native_psnr(model, image))
    report.final_prune_ratio = model.prune_ratio
    report.wall_time = time.perf_counter() - start
    return model, report


def fit_full(image: ImageBuffer, cfg: EncodeConfig) -> tuple[net.InrModel, EncodeReport]:
    """The full three-round pipeline (round 2 skipped when configured)."""
    start = time.perf_counter()
    coords = net.coordinate_grid(image.h, image.w, dtype=np.float32)
    targets = image.as_float(np.float32).reshape(-1, 3)

    model, report = fit_round1(image, cfg)
    current_psnr = report.psnr_after_round[0]
    log.debug("round 1 done: psnr=%.2f dB", current_psnr)

    if not cfg.skip_round2:
        model = compressor.prune_l1(model, cfg.iterative_prune_ratio)
        report.psnr_after_mask.append(_native_psnr(model, image))
        _train(model, coords, targets, cfg.retrain_lr, cfg.retrain_steps, report.loss_curve)
        current_psnr = _native_psnr(model, image)
        report.psnr_after_round.append(current_psnr)
        log.debug("round 2 done: pruned to %.3f, psnr=%.2f dB", model.prune_ratio, current_psnr)

    schedule = compressor.get_schedule(cfg.schedule)
    target_ratio = compressor.dynamic_ratio(schedule, current_psnr)
    model = compressor.prune_l1(model, target_ratio)
    report.psnr_after_mask.append(_native_psnr(model, image))
    _train(model, coords, targets, cfg.retrain_lr, cfg.retrain_steps, report.loss_curve)
    report.psnr_after_round.append(_native_psnr(model, image))
    log.debug(
        "round 3 done: target=%.3f, pruned to %.3f, psnr=%.2f dB",
        target_ratio, model.prune_ratio, report.psnr_after_round[-1],
    )

    report.final_prune_ratio = model.prune_ratio
    report.wall_time = time.perf_counter() - start
    return model, report


def derive_seed(global_seed: int, index: int) -> int:
    """Stable per-image seed: splitmix64 over (global seed, image index)."""
    mask = (1 << 64) - 1
    z = ((global_seed & mask) + (index + 1) * 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


@dataclass
class DatasetReport:
    """Aggregate over one encode_dataset call."""

    per_image: list[EncodeReport] = field(default_factory=list)
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        vals = [r.psnr_after_round[-1] for r in self.per_image if r is not None]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def mean_prune_ratio(self) -> float:
        vals = [r.final_prune_ratio for r in self.per_image if r is not None]
        return float(np.mean(vals)) if vals else math.nan


def encode_dataset(
    images,
    cfg: EncodeConfig,
    parallelism: int = 1,
    ids: list[str] | None = None,
    on_error: str = "fail_fast",
):
    """Fit every image independently and collect the models into an archive.

    Per-image seeds are derived from (cfg.seed, index) so results are
    identical at any parallelism level.  ``on_error="skip"`` records failures
    in the report instead of raising.
    """
    from .archive import ArchiveRecord, DatasetArchive

    if on_error not in ("fail_fast", "skip"):
        raise InvalidInputError(f"unknown on_error policy {on_error!r}")
    images = list(images)
    if not images:
        raise InvalidInputError("need at least one image")
    if ids is None:
        ids = [str(i) for i in range(len(images))]
    if len(ids) != len(images) or len(set(ids)) != len(ids):
        raise InvalidInputError("ids must be unique and match the image count")

    def fit_one(i: int):
        return fit_full(images[i], replace(cfg, seed=derive_seed(cfg.seed, i)))

    results: list[tuple[net.InrModel, EncodeReport] | None] = [None] * len(images)
    report = DatasetReport()
    if parallelism <= 1:
        iterator = ((i, _guard(fit_one, i, on_error)) for i in range(len(images)))
    else:
        from concurrent.futures import ThreadPoolExecutor

        pool = ThreadPoolExecutor(max_workers=parallelism)
        iterator = zip(range(len(images)), pool.map(lambda i: _guard(fit_one, i, on_error), range(len(images))))

    for i, outcome in iterator:
        if isinstance(outcome, Exception):
            report.failures.append((i, str(outcome)))
        else:
            results[i] = outcome
    if parallelism > 1:
        pool.shutdown()

    records = []
    for i, res in enumerate(results):
        if res is None:
            continue
        model, rep = res
        records.append(ArchiveRecord(ids[i], model))
        report.per_image.append(rep)
    return DatasetArchive(records=records), report


def _guard(fn, i: int, on_error: str):
    try:
        return fn(i)
    except Exception as e:  # noqa: BLE001
        if on_error == "fail_fast":
            raise
        return e
