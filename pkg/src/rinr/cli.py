"""Command-line surface: encode, decode, transform, measure, benchmark.

Raster files (PNG/BMP-class plus baseline JPEG) are read and written here
and only here, via Pillow.  Every subcommand supports ``--json`` for
machine-readable JSON-lines output; ``--config FILE`` loads a JSON object
whose entries override the parsed flags.

Exit codes: 0 success, 1 usage, 2 data/format/integrity, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import archive, bench as bench_mod, compressor, decoder, encoder, metrics, nas, net
from .errors import BatchItemError, NumericError, RinrError
from .image import ImageBuffer

RASTER_SUFFIXES = {".png", ".bmp", ".jpg", ".jpeg", ".ppm", ".pgm", ".tif", ".tiff", ".webp"}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_image(path) -> ImageBuffer:
    from PIL import Image

    with Image.open(path) as im:
        return ImageBuffer.from_u8(np.asarray(im.convert("RGB")))


def _save_png(buf: ImageBuffer, path) -> None:
    from PIL import Image

    Image.fromarray(buf.as_u8(), "RGB").save(path, format="PNG")


def _gather_rasters(inputs: list[str]) -> list[Path]:
    files: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in RASTER_SUFFIXES))
        elif p.is_file():
            files.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    if not files:
        raise FileNotFoundError(f"no raster files found under {inputs}")
    return files


def _unique_ids(files: list[Path]) -> list[str]:
    ids, seen = [], set()
    for i, p in enumerate(files):
        rid = p.stem
        if rid in seen:
            rid = f"{rid}.{i}"
        seen.add(rid)
        ids.append(rid)
    return ids


def _parse_arch(text: str, omega: float) -> net.Architecture:
    try:
        layers, hidden = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--arch expects L,H (e.g. 3,15), got {text!r}") from None
    return net.Architecture.uniform(layers, hidden, omega)


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(x) for x in text.lower().split("x"))
        return h, w
    except ValueError:
        raise argparse.ArgumentTypeError(f"--size expects HxW (e.g. 64x64), got {text!r}") from None


def _emit(args, record: dict, text: str) -> None:
    if args.json:
        print(json.dumps(record))
    else:
        print(text)


def _jsonable(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return x


# ---------------------------------------------------------------- subcommands


def _cmd_encode(args) -> int:
    files = _gather_rasters(args.inputs)
    ids = _unique_ids(files)
    images = [_load_image(p) for p in files]
    cfg = encoder.EncodeConfig(
        arch=_parse_arch(args.arch, args.omega),
        round1_lr=args.round1_lr,
        round1_steps=args.round1_steps,
        retrain_lr=args.retrain_lr,
        retrain_steps=args.retrain_steps,
        iterative_prune_ratio=args.iterative_ratio,
        skip_round2=args.skip_round2,
        schedule=args.schedule,
        seed=args.seed,
    )
    ds, report = encoder.encode_dataset(
        images, cfg, parallelism=args.jobs, ids=ids, on_error=args.on_error
    )
    for rid, rep in zip(ds.ids(), report.per_image):
        _emit(
            args,
            {
                "record": rid,
                "psnr_db": rep.psnr_after_round[-1],
                "prune_ratio": rep.final_prune_ratio,
                "seconds": rep.wall_time,
            },
            f"{rid}: {rep.psnr_after_round[-1]:.2f} dB, pruned {100 * rep.final_prune_ratio:.1f}%"
            f" ({rep.wall_time:.1f}s)",
        )
    for idx, msg in report.failures:
        print(f"failed: {files[idx]}: {msg}", file=sys.stderr)
    n_bytes = archive.write(ds, args.output)
    _emit(
        args,
        {
            "output": str(args.output),
            "images": len(ds),
            "failures": len(report.failures),
            "mean_psnr_db": report.mean_psnr,
            "mean_prune_ratio": report.mean_prune_ratio,
            "bytes": n_bytes,
        },
        f"wrote {args.output}: {len(ds)} records, {n_bytes} bytes, "
        f"mean {report.mean_psnr:.2f} dB, mean prune {100 * report.mean_prune_ratio:.1f}%",
    )
    return 0


def _cmd_decode(args) -> int:
    ds = archive.read(args.archive)
    wanted = set(args.ids.split(",")) if args.ids else None
    records = [r for r in ds.records if wanted is None or r.id in wanted]
    if wanted is not None and len(records) != len(wanted):
        missing = wanted - {r.id for r in records}
        raise RinrError(f"ids not in archive: {sorted(missing)}")
    out_h, out_w = args.size if args.size else (None, None)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = decoder.decode_batch([r.model for r in records], out_h, out_w, parallelism=args.jobs)
    for rec, img in zip(records, images):
        dest = out_dir / f"{rec.id.replace('/', '_')}.png"
        _save_png(img, dest)
        _emit(
            args,
            {"record": rec.id, "file": str(dest), "h": img.h, "w": img.w},
            f"{rec.id} -> {dest} ({img.h}x{img.w})",
        )
    return 0


def _cmd_prune(args) -> int:
    ds = archive.read(args.archive)
    out = archive.DatasetArchive(
        [archive.ArchiveRecord(r.id, compressor.prune_l1(r.model, args.ratio)) for r in ds.records]
    )
    n_bytes = archive.write(out, args.output)
    _emit(
        args,
        {"output": str(args.output), "records": len(out), "total_ratio": args.ratio, "bytes": n_bytes},
        f"wrote {args.output}: {len(out)} records pruned to total ratio {args.ratio}, {n_bytes} bytes",
    )
    return 0


def _cmd_quantize(args) -> int:
    mode = f"affine{args.bits}"
    ds = archive.read(args.archive)
    out = archive.DatasetArchive(
        [archive.ArchiveRecord(r.id, compressor.quantize(r.model, mode)) for r in ds.records]
    )
    n_bytes = archive.write(out, args.output)
    _emit(
        args,
        {"output": str(args.output), "records": len(out), "mode": mode, "bytes": n_bytes},
        f"wrote {args.output}: {len(out)} records quantized to {mode}, {n_bytes} bytes",
    )
    return 0


def _cmd_psnr(args) -> int:
    rep = metrics.psnr(_load_image(args.a), _load_image(args.b), quantized=args.quantized)
    _emit(args, {"mse": rep.mse, "psnr_db": _jsonable(rep.psnr_db)}, str(rep))
    return 0


def _cmd_nas(args) -> int:
    depths = range(args.min_depth, args.max_depth + 1)
    archs = nas.enumerate_architectures(
        args.budget, shape=args.shape, depths=depths, omega=args.omega, max_width=args.max_width
    )
    for a in archs:
        n = net.param_count(a)
        _emit(
            args,
            {"dims": list(a.dims), "params": n, "bytes_f32": 4 * n},
            f"{'-'.join(map(str, a.dims))}: {n} params, {4 * n} bytes f32",
        )
    if args.output:
        with open(args.output, "w") as fh:
            fh.write("dims,params,bytes_f32\n")
            for a in archs:
                n = net.param_count(a)
                fh.write(f"{'-'.join(map(str, a.dims))},{n},{4 * n}\n")
    return 0


def _cmd_sweep(args) -> int:
    images = [_load_image(p) for p in _gather_rasters(args.images)]
    archs = []
    for part in args.archs.split(";"):
        layers, hidden = (int(x) for x in part.split(","))
        archs.append(net.Architecture.uniform(layers, hidden).dims)
    cells = nas.sweep(
        images,
        archs,
        omegas=[float(x) for x in args.omegas.split(",")],
        lrs=[float(x) for x in args.lrs.split(",")],
        steps_list=[int(x) for x in args.steps.split(",")],
        seed=args.seed,
        parallelism=args.jobs,
    )
    for c in cells:
        _emit(
            args,
            {
                "dims": list(c.dims),
                "omega": c.omega,
                "lr": c.lr,
                "steps": c.steps,
                "mean_psnr_db": c.mean_psnr,
                "failed": c.failed,
                "best_omega": c.best_omega,
            },
            f"{'-'.join(map(str, c.dims))} w={c.omega} lr={c.lr} steps={c.steps}: "
            f"{c.mean_psnr:.2f} dB{' FAILED' if c.failed else ''}{' *best-w' if c.best_omega else ''}",
        )
    if args.output:
        nas.write_sweep_csv(cells, args.output)
    return 0


def _cmd_bench(args) -> int:
    out_h, out_w = args.size if args.size else (None, None)
    rep = bench_mod.bench(args.archive, batch=args.batch, jobs=args.jobs, out_h=out_h, out_w=out_w)
    record = {
        "images": rep.images,
        "pixels": rep.pixels,
        "batch": rep.batch,
        "jobs": rep.jobs,
        "stage_seconds": rep.stage_seconds,
        "wall_seconds": rep.wall_seconds,
        "images_per_s": rep.images_per_s,
        "pixels_per_s": rep.pixels_per_s,
        "digest": rep.digest,
    }
    lines = [
        f"{rep.images} images, {rep.pixels} pixels (batch={rep.batch}, jobs={rep.jobs})",
        *(f"  {k:>14}: {v * 1000:.2f} ms" for k, v in rep.stage_seconds.items()),
        f"  throughput: {rep.images_per_s:.1f} images/s, {rep.pixels_per_s:.3e} pixels/s",
        f"  digest: {rep.digest[:16]}",
    ]
    _emit(args, record, "\n".join(lines))
    return 0


def _cmd_stats(args) -> int:
    ds = archive.read(args.archive)
    st = archive.stats(ds, baseline_dir=args.jpeg_dir)
    record = {
        "total_bytes": st.total_bytes,
        "header_bytes": st.header_bytes,
        "records": len(st.per_record_bytes),
        "mean_prune_ratio": st.mean_prune_ratio,
        "dense_f32_bytes": st.dense_f32_bytes,
        "vs_dense_ratio": st.vs_dense_ratio,
        "per_record_bytes": dict(st.per_record_bytes),
    }
    lines = [
        f"{args.archive}: {len(st.per_record_bytes)} records, {st.total_bytes} bytes "
        f"({st.header_bytes} header)",
        f"  mean prune ratio: {100 * st.mean_prune_ratio:.1f}%",
        f"  vs dense f32 ({st.dense_f32_bytes} bytes): {st.vs_dense_ratio:.3f}",
    ]
    if st.baseline_dir_bytes is not None:
        record["baseline_dir_bytes"] = st.baseline_dir_bytes
        record["vs_baseline_ratio"] = st.vs_baseline_ratio
        lines.append(
            f"  compressed/original vs {args.jpeg_dir} ({st.baseline_dir_bytes} bytes): "
            f"{st.vs_baseline_ratio:.3f}"
        )
    _emit(args, record, "\n".join(lines))
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="rinr", description="Per-image coordinate-MLP image codec")
    parser.add_argument("--json", action="store_true", help="machine-readable JSON-lines output")
    parser.add_argument("--config", help="JSON file whose entries override parsed flags")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("encode", help="fit images and write a .rinr archive")
    p.add_argument("inputs", nargs="+", help="image files and/or directories")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--arch", default="3,15", help="L,H: weight matrices, hidden width")
    p.add_argument("--omega", type=float, default=net.DEFAULT_OMEGA)
    p.add_argument("--schedule", choices=sorted(compressor.SCHEDULES), default="cifar")
    p.add_argument("--skip-round2", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--round1-lr", type=float, default=5e-4)
    p.add_argument("--round1-steps", type=int, default=5000)
    p.add_argument("--retrain-lr", type=float, default=2e-4)
    p.add_argument("--retrain-steps", type=int, default=10000)
    p.add_argument("--iterative-ratio", type=float, default=0.20)
    p.add_argument("--on-error", choices=["fail_fast", "skip"], default="fail_fast")
    p.set_defaults(fn=_cmd_encode)

    p = sub.add_parser("decode", help="reconstruct images from an archive")
    p.add_argument("archive")
    p.add_argument("-o", "--output", required=True, help="output directory (PNG per record)")
    p.add_argument("--size", type=_parse_size, default=None, help="HxW; defaults to native")
    p.add_argument("--ids", default=None, help="comma-separated record ids")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("prune", help="magnitude-prune every record to a total ratio")
    p.add_argument("archive")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.set_defaults(fn=_cmd_prune)

    p = sub.add_parser("quantize", help="quantize hidden layers of every record")
    p.add_argument("archive")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--bits", type=int, choices=[8, 16], default=8)
    p.set_defaults(fn=_cmd_quantize)

    p = sub.add_parser("psnr", help="PSNR between two raster files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--quantized", action="store_true", help="compare after 8-bit rounding")
    p.set_defaults(fn=_cmd_psnr)

    p = sub.add_parser("nas", help="enumerate architectures under a byte budget")
    p.add_argument("--budget", type=int, required=True, help="dense f32 bytes")
    p.add_argument("--shape", choices=["uniform", "tapered"], default="uniform")
    p.add_argument("--min-depth", type=int, default=2)
    p.add_argument("--max-depth", type=int, default=10)
    p.add_argument("--omega", type=float, default=net.DEFAULT_OMEGA)
    p.add_argument("--max-width", type=int, default=4096)
    p.add_argument("-o", "--output", default=None, help="CSV path")
    p.set_defaults(fn=_cmd_nas)

    p = sub.add_parser("sweep", help="factorial (arch, omega, lr, steps) study")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--archs", default="3,15", help="semicolon-separated L,H pairs")
    p.add_argument("--omegas", default="30")
    p.add_argument("--lrs", default="5e-4")
    p.add_argument("--steps", default="500")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--output", default=None, help="CSV path")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("bench", help="decode throughput of an archive")
    p.add_argument("archive")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--size", type=_parse_size, default=None)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("stats", help="size accounting for an archive")
    p.add_argument("archive")
    p.add_argument("--jpeg-dir", default=None, help="directory of source images to compare against")
    p.set_defaults(fn=_cmd_stats)

    return parser


def _apply_config(parser: _Parser, args) -> None:
    if not args.config:
        return
    with open(args.config) as fh:
        overrides = json.load(fh)
    if not isinstance(overrides, dict):
        parser.error("--config must contain a JSON object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            parser.error(f"--config key {key!r} does not match any option")
        setattr(args, dest, value)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "fn", None):
            parser.error("a subcommand is required")
        _apply_config(parser, args)
        return args.fn(args)
    except SystemExit as e:
        return int(e.code or 0)
    except BatchItemError as e:
        print(f"rinr: error: {e}", file=sys.stderr)
        return 3 if isinstance(e.cause, NumericError) else 2
    except NumericError as e:
        print(f"rinr: error: {e}", file=sys.stderr)
        return 3
    except (RinrError, OSError, KeyError) as e:
        print(f"rinr: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
