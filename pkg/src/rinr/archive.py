"""The .rinr container: a whole dataset of per-image models in one file.

Layout (all integers little-endian)::

    magic "RINR" | version u16 | record count u32
    index: per record, offset u64 (from file start) + length u32
    records, back to back

Record::

    id: u16 length + utf-8 bytes
    source_h u32 | source_w u32
    ndims u16 | dims u16 * ndims | omega f64
    quant mode u8 (0 none, 1 affine8, 2 affine16)
    per layer:
        tag u8   (0 f32, 1 f16, 2 affine8, 3 affine16)
        form u8  (0 dense, 1 dense + mask bitset, 2 sparse)
        const u8 (degenerate quantized layer: values stored as exact f32)
        [affine tags] scale f64 | zero_point i32
        [form >= 1]   kept-bitset, ceil(n/8) bytes, LSB-first, row-major
        values       sparse: kept entries only, else all n entries
                     dtype: f32 | f16 | u8 codes | u16 codes (f32 when const)
        bias         out * f32
    crc32 u32 over all preceding record bytes

A layer goes sparse when its zero fraction exceeds 12.5%, the break-even
point where the bitset pays for itself against 1-byte codes.  Pruned entries
in dense affine layers are stored as the zero_point code, which dequantizes
to exactly 0.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compressor import LayerQuant, QuantInfo
from .errors import FormatError, IntegrityError, InvalidInputError
from .net import Architecture, InrModel, LayerWeights, param_count, validate_model

MAGIC = b"RINR"
VERSION = 1
HEADER_FMT = "<4sHI"
HEADER_SIZE = struct.calcsize(HEADER_FMT)  # 10
INDEX_ENTRY_FMT = "<QI"
INDEX_ENTRY_SIZE = struct.calcsize(INDEX_ENTRY_FMT)  # 12

TAG_F32, TAG_F16, TAG_A8, TAG_A16 = 0, 1, 2, 3
FORM_DENSE, FORM_DENSE_MASK, FORM_SPARSE = 0, 1, 2
SPARSE_THRESHOLD = 0.125

_VALUE_DTYPES = {TAG_F32: "<f4", TAG_F16: "<f2", TAG_A8: "<u1", TAG_A16: "<u2"}
_MODE_CODES = {"none": 0, "affine8": 1, "affine16": 2}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


@dataclass
class ArchiveRecord:
    id: str
    model: InrModel


@dataclass
class DatasetArchive:
    """In-memory archive: ordered records plus the format version."""

    records: list[ArchiveRecord] = field(default_factory=list)
    version: int = VERSION

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("record ids must be unique")

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def get(self, record_id: str) -> InrModel:
        for r in self.records:
            if r.id == record_id:
                return r.model
        raise KeyError(record_id)


def _layer_plan(model: InrModel, i: int) -> tuple[int, int, bool]:
    """(tag, form, const) the writer will use for layer i."""
    lq = model.quant.layers.get(i) if model.quant is not None else None
    if lq is not None:
        tag = TAG_A8 if lq.bits == 8 else TAG_A16
        const = lq.constant
    else:
        tag = TAG_F16 if model.layers[i].w.dtype == np.float16 else TAG_F32
        const = False
    mask = model.mask[i]
    zeros = mask.size - int(mask.sum())
    if zeros == 0:
        form = FORM_DENSE
    elif zeros / mask.size > SPARSE_THRESHOLD:
        form = FORM_SPARSE
    else:
        form = FORM_DENSE_MASK
    return tag, form, const


def _encode_layer(model: InrModel, i: int) -> bytes:
    lw, mask = model.layers[i], model.mask[i]
    tag, form, const = _layer_plan(model, i)
    parts = [struct.pack("<BBB", tag, form, int(const))]

    if tag in (TAG_A8, TAG_A16):
        lq = model.quant.layers[i]
        parts.append(struct.pack("<di", lq.scale, lq.zero_point))

    if form != FORM_DENSE:
        parts.append(np.packbits(mask.ravel(), bitorder="little").tobytes())

    if tag in (TAG_A8, TAG_A16) and not const:
        from .compressor import quantize_codes

        values = quantize_codes(model, i)
        dtype = _VALUE_DTYPES[tag]
    else:
        values = lw.w
        dtype = "<f2" if tag == TAG_F16 else "<f4"
    flat = values.ravel()
    if form == FORM_SPARSE:
        flat = flat[mask.ravel()]
    parts.append(np.ascontiguousarray(flat, dtype=dtype).tobytes())
    parts.append(np.ascontiguousarray(lw.b, dtype="<f4").tobytes())
    return b"".join(parts)


def encode_record(record: ArchiveRecord) -> bytes:
    """Serialize one record, trailing CRC32 included."""
    model = record.model
    validate_model(model)
    rid = record.id.encode("utf-8")
    if len(rid) > 0xFFFF:
        raise InvalidInputError("record id longer than 65535 bytes")
    parts = [struct.pack("<H", len(rid)), rid]
    parts.append(struct.pack("<II", model.source_h, model.source_w))
    dims = model.arch.dims
    if max(dims) > 0xFFFF:
        raise InvalidInputError(f"layer widths above 65535 are not serializable: {dims}")
    parts.append(struct.pack(f"<H{len(dims)}H", len(dims), *dims))
    parts.append(struct.pack("<d", model.arch.omega))
    parts.append(struct.pack("<B", _MODE_CODES[quant_mode_of(model)]))
    for i in range(len(model.layers)):
        parts.append(_encode_layer(model, i))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def quant_mode_of(model: InrModel) -> str:
    return model.quant.mode if model.quant is not None else "none"


def serialize(archive: DatasetArchive) -> bytes:
    """Whole-file bytes for an archive."""
    bodies = [encode_record(r) for r in archive.records]
    header = struct.pack(HEADER_FMT, MAGIC, archive.version, len(bodies))
    offset = HEADER_SIZE + INDEX_ENTRY_SIZE * len(bodies)
    index = bytearray()
    for body in bodies:
        index += struct.pack(INDEX_ENTRY_FMT, offset, len(body))
        offset += len(body)
    return header + bytes(index) + b"".join(bodies)


def write(archive: DatasetArchive, sink) -> int:
    """Write the archive to a path or binary file object; returns bytes written."""
    data = serialize(archive)
    if hasattr(sink, "write"):
        sink.write(data)
    else:
        Path(sink).write_bytes(data)
    return len(data)


class _Cursor:
    """Sequential reader over a bytes buffer with bounds checking."""

    def __init__(self, buf: bytes, context: str):
        self.buf = buf
        self.pos = 0
        self.context = context

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise IntegrityError(f"{self.context}: truncated (needed {n} bytes at {self.pos})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


@dataclass
class RawLayer:
    """One layer as stored on disk, before any affine decoding."""

    tag: int
    form: int
    const: bool
    scale: float
    zero_point: int
    mask_bits: bytes | None
    values: np.ndarray
    bias: np.ndarray
    shape: tuple[int, int]


@dataclass
class RawRecord:
    """A parsed but not yet materialized record (codes still packed)."""

    id: str
    source_h: int
    source_w: int
    arch: Architecture
    quant_mode: str
    layers: list[RawLayer]


def parse_record(body: bytes, context: str = "record") -> RawRecord:
    """Parse one record body (CRC already verified by the caller)."""
    cur = _Cursor(body, context)
    (id_len,) = cur.unpack("<H")
    rid = cur.take(id_len).decode("utf-8")
    source_h, source_w = cur.unpack("<II")
    (ndims,) = cur.unpack("<H")
    dims = cur.unpack(f"<{ndims}H")
    (omega,) = cur.unpack("<d")
    try:
        arch = Architecture(dims, omega)
    except InvalidInputError as e:
        raise IntegrityError(f"{context}: bad architecture: {e}") from e
    (mode_code,) = cur.unpack("<B")
    if mode_code not in _MODE_NAMES:
        raise IntegrityError(f"{context}: unknown quant mode {mode_code}")

    layers: list[RawLayer] = []
    for i, (fan_in, fan_out) in enumerate(zip(arch.dims[:-1], arch.dims[1:])):
        n = fan_in * fan_out
        tag, form, const = cur.unpack("<BBB")
        if tag not in _VALUE_DTYPES or form not in (FORM_DENSE, FORM_DENSE_MASK, FORM_SPARSE):
            raise IntegrityError(f"{context}: layer {i} has bad tag/form {tag}/{form}")
        scale, zero_point = 1.0, 0
        if tag in (TAG_A8, TAG_A16):
            scale, zero_point = cur.unpack("<di")
        mask_bits = cur.take((n + 7) // 8) if form != FORM_DENSE else None
        if form == FORM_SPARSE:
            kept = int(
                np.unpackbits(np.frombuffer(mask_bits, dtype=np.uint8), count=n, bitorder="little").sum()
            )
        else:
            kept = n
        dtype = "<f4" if (const and tag in (TAG_A8, TAG_A16)) else _VALUE_DTYPES[tag]
        itemsize = np.dtype(dtype).itemsize
        values = np.frombuffer(cur.take(kept * itemsize), dtype=dtype)
        bias = np.frombuffer(cur.take(fan_out * 4), dtype="<f4")
        layers.append(
            RawLayer(tag, form, bool(const), scale, zero_point, mask_bits, values, bias, (fan_out, fan_in))
        )
    if cur.pos != len(body):
        raise IntegrityError(f"{context}: {len(body) - cur.pos} trailing bytes")
    return RawRecord(rid, source_h, source_w, arch, _MODE_NAMES[mode_code], layers)


def materialize(raw: RawRecord) -> ArchiveRecord:
    """Expand a raw record into a full InrModel (dequantizes codes, scatters
    sparse values, rebuilds masks and quantization metadata)."""
    layers: list[LayerWeights] = []
    masks: list[np.ndarray] = []
    qlayers: dict[int, LayerQuant] = {}
    for i, rl in enumerate(raw.layers):
        out_dim, in_dim = rl.shape
        n = out_dim * in_dim
        if rl.mask_bits is not None:
            mask = np.unpackbits(
                np.frombuffer(rl.mask_bits, dtype=np.uint8), count=n, bitorder="little"
            ).astype(bool)
        else:
            mask = np.ones(n, dtype=bool)

        if rl.tag in (TAG_A8, TAG_A16) and not rl.const:
            dense = np.zeros(n, dtype=np.float64)
            if rl.form == FORM_SPARSE:
                dense[mask] = rl.values.astype(np.float64)
            else:
                dense[:] = rl.values.astype(np.float64)
            w = (rl.scale * (dense - rl.zero_point)).astype(np.float32)
            w[~mask] = 0.0
        else:
            out_dtype = np.float16 if rl.tag == TAG_F16 else np.float32
            w = np.zeros(n, dtype=out_dtype)
            if rl.form == FORM_SPARSE:
                w[mask] = rl.values
            else:
                w[:] = rl.values
        if rl.tag in (TAG_A8, TAG_A16):
            bits = 8 if rl.tag == TAG_A8 else 16
            qlayers[i] = LayerQuant(bits, rl.scale, rl.zero_point, rl.const)
        layers.append(LayerWeights(w.reshape(out_dim, in_dim), rl.bias.astype(np.float32).copy()))
        masks.append(mask.reshape(out_dim, in_dim))

    quant = QuantInfo(raw.quant_mode, qlayers) if raw.quant_mode != "none" else None
    model = InrModel(
        arch=raw.arch,
        layers=layers,
        mask=masks,
        source_h=raw.source_h,
        source_w=raw.source_w,
        quant=quant,
    )
    validate_model(model)
    return ArchiveRecord(raw.id, model)


def _check_crc(body_with_crc: bytes, context: str) -> bytes:
    if len(body_with_crc) < 4:
        raise IntegrityError(f"{context}: record too short for CRC")
    body, (stored,) = body_with_crc[:-4], struct.unpack("<I", body_with_crc[-4:])
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if stored != actual:
        raise IntegrityError(f"{context}: CRC mismatch (stored {stored:#010x}, computed {actual:#010x})")
    return body


class ArchiveReader:
    """Random access over a .rinr file: reading record k touches only the
    header/index plus record k's byte range."""

    def __init__(self, source):
        self._own = not hasattr(source, "read")
        self._fh = open(source, "rb") if self._own else source
        header = self._fh.read(HEADER_SIZE)
        if len(header) < HEADER_SIZE:
            raise IntegrityError("truncated header")
        magic, version, count = struct.unpack(HEADER_FMT, header)
        if magic != MAGIC:
            raise IntegrityError(f"bad magic {magic!r}")
        if version > VERSION:
            raise IntegrityError(f"unsupported version {version}")
        self.version = version
        raw_index = self._fh.read(INDEX_ENTRY_SIZE * count)
        if len(raw_index) < INDEX_ENTRY_SIZE * count:
            raise IntegrityError("truncated index")
        self.index = [
            struct.unpack_from(INDEX_ENTRY_FMT, raw_index, i * INDEX_ENTRY_SIZE) for i in range(count)
        ]
        expect = HEADER_SIZE + INDEX_ENTRY_SIZE * count
        for k, (off, length) in enumerate(self.index):
            if off != expect:
                raise IntegrityError(f"record {k}: offset {off} != expected {expect}")
            expect = off + length

    def __len__(self) -> int:
        return len(self.index)

    def read_raw(self, k: int) -> RawRecord:
        if not (0 <= k < len(self.index)):
            raise InvalidInputError(f"record {k} out of range [0, {len(self.index)})")
        off, length = self.index[k]
        self._fh.seek(off)
        blob = self._fh.read(length)
        if len(blob) < length:
            raise IntegrityError(f"record {k}: truncated body")
        body = _check_crc(blob, f"record {k}")
        raw = parse_record(body, f"record {k}")
        return raw

    def read_record(self, k: int) -> ArchiveRecord:
        return materialize(self.read_raw(k))

    def close(self) -> None:
        if self._own:
            self._fh.close()

    def __enter__(self) -> "ArchiveReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read(source) -> DatasetArchive:
    """Load and fully validate an archive; a corrupt record surfaces as an
    IntegrityError naming it, and nothing partial is returned."""
    with ArchiveReader(source) as reader:
        records = [reader.read_record(k) for k in range(len(reader))]
        return DatasetArchive(records=records, version=reader.version)


@dataclass
class ArchiveStats:
    total_bytes: int
    header_bytes: int
    per_record_bytes: list[tuple[str, int]]
    mean_prune_ratio: float
    dense_f32_bytes: int
    vs_dense_ratio: float
    baseline_dir_bytes: int | None = None
    vs_baseline_ratio: float | None = None


def stats(archive: DatasetArchive, baseline_dir=None) -> ArchiveStats:
    """Size accounting: total/per-record bytes, zero fraction, and ratios
    against dense float32 storage and (optionally) a directory of source
    images whose file sizes are summed."""
    bodies = [(r.id, len(encode_record(r))) for r in archive.records]
    header = HEADER_SIZE + INDEX_ENTRY_SIZE * len(archive.records)
    total = header + sum(b for _, b in bodies)
    dense = sum(param_count(r.model.arch) * 4 for r in archive.records)
    ratios = [r.model.prune_ratio for r in archive.records]
    baseline_bytes = None
    vs_baseline = None
    if baseline_dir is not None:
        baseline_bytes = sum(p.stat().st_size for p in Path(baseline_dir).iterdir() if p.is_file())
        vs_baseline = total / baseline_bytes if baseline_bytes else None
    return ArchiveStats(
        total_bytes=total,
        header_bytes=header,
        per_record_bytes=bodies,
        mean_prune_ratio=float(np.mean(ratios)) if ratios else 0.0,
        dense_f32_bytes=dense,
        vs_dense_ratio=(total / dense) if dense else 0.0,
        baseline_dir_bytes=baseline_bytes,
        vs_baseline_ratio=vs_baseline,
    )
