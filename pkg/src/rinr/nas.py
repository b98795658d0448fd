"""Architecture enumeration under a byte budget, plus hyperparameter sweeps.

The byte budget counts dense float32 weights and biases (pre-pruning).
Uniform shapes share one hidden width; tapered shapes ramp the hidden widths
up to a peak at the middle layer and back down symmetrically.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from . import encoder, net
from .errors import InvalidInputError, TrainingError

DEPTH_WARN_LIMIT = 10  # deeper nets were observed to lose PSNR


def _tapered_dims(depth: int, peak: int, step: int) -> tuple[int, ...] | None:
    """Hidden widths ramping edge -> peak -> edge; None if the edge hits 0."""
    m = depth - 1
    r_max = (m - 1) // 2
    edge = peak - step * r_max
    if edge < 1:
        return None
    hidden = [peak - step * (r_max - min(i, m - 1 - i)) for i in range(m)]
    return (2, *hidden, 3)


def enumerate_architectures(
    budget_bytes: int,
    shape: str = "uniform",
    depths=range(2, 11),
    omega: float = net.DEFAULT_OMEGA,
    max_width: int = 4096,
) -> list[net.Architecture]:
    """All (depth, width) variants whose dense-f32 size fits the budget.

    Uniform: per depth, the largest equal hidden width under budget.
    Tapered: per depth, the largest peak width reachable by a symmetric ramp,
    with the smallest step that still fits (fullest budget use).  Depths with
    no feasible width are skipped; a depth beyond 10 raises a warning.
    """
    if shape not in ("uniform", "tapered"):
        raise InvalidInputError(f"shape must be uniform|tapered, got {shape!r}")
    if budget_bytes < 1:
        raise InvalidInputError("budget must be positive")
    depths = list(depths)
    if any(d < 2 for d in depths):
        raise InvalidInputError("depth (weight matrices) must be >= 2")
    if any(d > DEPTH_WARN_LIMIT for d in depths):
        warnings.warn(
            f"depths beyond {DEPTH_WARN_LIMIT} layers tend to reduce PSNR", stacklevel=2
        )

    def fits(dims) -> bool:
        return net.param_count(net.Architecture(dims, omega)) * 4 <= budget_bytes

    out: list[net.Architecture] = []
    for depth in depths:
        if shape == "uniform":
            lo, hi, best = 1, max_width, 0
            while lo <= hi:
                mid = (lo + hi) // 2
                if fits((2, *([mid] * (depth - 1)), 3)):
                    best, lo = mid, mid + 1
                else:
                    hi = mid - 1
            if best >= 1:
                out.append(net.Architecture.uniform(depth, best, omega))
        else:
            m = depth - 1
            r_max = (m - 1) // 2
            # Feasibility is not monotone in the peak (the max step jumps at
            # divisor boundaries), so scan peaks downward: a peak fits if its
            # steepest ramp does, then settle on the smallest step that fits.
            for peak in range(max_width, 0, -1):
                step_max = (peak - 1) // r_max if r_max else 0
                if not fits(_tapered_dims(depth, peak, step_max)):
                    continue
                step = step_max
                if r_max:
                    step = next(
                        s for s in range(1, step_max + 1) if fits(_tapered_dims(depth, peak, s))
                    )
                out.append(net.Architecture(_tapered_dims(depth, peak, step), omega))
                break

    for arch in out:
        assert net.param_count(arch) * 4 <= budget_bytes
    return out


@dataclass
class SweepCell:
    """One grid point of the hyperparameter sweep and its outcome."""

    dims: tuple[int, ...]
    omega: float
    lr: float
    steps: int
    mean_psnr: float
    failed: bool
    best_omega: bool = False


FAIL_PSNR_DB = 15.0  # below this the compression is considered to have failed


def sweep(
    images,
    archs: list[tuple[int, ...]],
    omegas: list[float],
    lrs: list[float],
    steps_list: list[int],
    seed: int = 0,
    parallelism: int = 1,
) -> list[SweepCell]:
    """Full-factorial round-1 fits over (arch, omega, lr, steps).

    Every cell sees the same per-image seeds, so cells are comparable.  A
    cell is flagged failed when any image diverges (non-finite loss) or lands
    below 15 dB.  Within each (arch, lr, steps) group the best-PSNR omega is
    marked.
    """
    images = list(images)
    if not images:
        raise InvalidInputError("sweep needs at least one image")
    grid = [
        (dims, omega, lr, steps)
        for dims in archs
        for omega in omegas
        for lr in lrs
        for steps in steps_list
    ]

    def run_cell(cell) -> SweepCell:
        dims, omega, lr, steps = cell
        base = encoder.EncodeConfig(
            arch=net.Architecture(dims, omega), round1_lr=lr, round1_steps=steps
        )
        psnrs, failed = [], False
        for i, image in enumerate(images):
            try:
                _, rep = encoder.fit_round1(image, replace(base, seed=encoder.derive_seed(seed, i)))
                score = rep.psnr_after_round[0]
                psnrs.append(score)
                if not math.isfinite(score) or score < FAIL_PSNR_DB:
                    failed = True
            except TrainingError:
                failed = True
        mean = sum(psnrs) / len(psnrs) if psnrs else math.nan
        return SweepCell(dims, omega, lr, steps, mean, failed)

    if parallelism <= 1:
        cells = [run_cell(c) for c in grid]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            cells = list(pool.map(run_cell, grid))

    by_group: dict[tuple, SweepCell] = {}
    for c in cells:
        key = (c.dims, c.lr, c.steps)
        prev = by_group.get(key)
        if prev is None or (math.isfinite(c.mean_psnr) and not c.mean_psnr <= prev.mean_psnr):
            by_group[key] = c
    for c in cells:
        c.best_omega = by_group.get((c.dims, c.lr, c.steps)) is c
    return cells


def write_sweep_csv(cells: list[SweepCell], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dims", "omega", "lr", "steps", "mean_psnr", "failed", "best_omega"])
        for c in cells:
            w.writerow(
                ["-".join(map(str, c.dims)), c.omega, c.lr, c.steps,
                 f"{c.mean_psnr:.4f}", int(c.failed), int(c.best_omega)]
            )
