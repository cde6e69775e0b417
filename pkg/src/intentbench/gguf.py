"""GGUF model-file inspection: header, typed metadata, tensor table, footprints.

Implements the public GGUF v2/v3 little-endian layout (magic, versioned
header, typed key-value metadata, aligned tensor table) as documented in
ggml's gguf.md, plus the (elements-per-block, bytes-per-block) quantization
tables from ggml's GGML_QUANT_SIZES. Tensor data is never loaded; byte
footprints are computed from the declared shapes and types alone.

Every read is bounded by the file size, loop counts are pre-checked against
the remaining bytes, and array nesting is depth-capped, so arbitrarily
corrupted files produce structured errors rather than crashes or hangs.

A fixture writer emits small spec-conformant files (with synthetic tensor
payloads) that parse back to identical structures; it exists for testing and
for documenting the layout in executable form.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

GGUF_MAGIC = b"GGUF"
SUPPORTED_VERSIONS = frozenset({2, 3})
DEFAULT_ALIGNMENT = 32
ALIGNMENT_KEY = "general.alignment"
MAX_TENSOR_DIMS = 4
MAX_ARRAY_DEPTH = 8


class GgufError(Exception):
    """Base for all structured GGUF parsing/writing failures."""


class BadMagic(GgufError):
    pass


class UnsupportedVersion(GgufError):
    pass


class TruncatedFile(GgufError):
    pass


class MalformedKv(GgufError):
    pass


class MalformedTensor(GgufError):
    pass


class NotBlockAligned(GgufError):
    pass


class UnknownType(GgufError):
    pass


class UnsupportedKvType(GgufError):
    pass


class GgufValueType(IntEnum):
    """Metadata value type ids from the GGUF specification."""

    UINT8 = 0
    INT8 = 1
    UINT16 = 2
    INT16 = 3
    UINT32 = 4
    INT32 = 5
    FLOAT32 = 6
    BOOL = 7
    STRING = 8
    ARRAY = 9
    UINT64 = 10
    INT64 = 11
    FLOAT64 = 12


class GgmlQuantType(IntEnum):
    """Tensor data type ids from ggml."""

    F32 = 0
    F16 = 1
    Q4_0 = 2
    Q4_1 = 3
    Q5_0 = 6
    Q5_1 = 7
    Q8_0 = 8
    Q8_1 = 9
    Q2_K = 10
    Q3_K = 11
    Q4_K = 12
    Q5_K = 13
    Q6_K = 14
    Q8_K = 15
    I8 = 24
    I16 = 25
    I32 = 26
    I64 = 27
    F64 = 28
    BF16 = 30


# (elements per block, bytes per block) per ggml's GGML_QUANT_SIZES.
_QK_K = 256
QUANT_BLOCK_SIZES: dict[GgmlQuantType, tuple[int, int]] = {
    GgmlQuantType.F32: (1, 4),
    GgmlQuantType.F16: (1, 2),
    GgmlQuantType.Q4_0: (32, 2 + 16),
    GgmlQuantType.Q4_1: (32, 2 + 2 + 16),
    GgmlQuantType.Q5_0: (32, 2 + 4 + 16),
    GgmlQuantType.Q5_1: (32, 2 + 2 + 4 + 16),
    GgmlQuantType.Q8_0: (32, 2 + 32),
    GgmlQuantType.Q8_1: (32, 4 + 4 + 32),
    GgmlQuantType.Q2_K: (_QK_K, 2 + 2 + _QK_K // 16 + _QK_K // 4),
    GgmlQuantType.Q3_K: (_QK_K, 2 + _QK_K // 4 + _QK_K // 8 + 12),
    GgmlQuantType.Q4_K: (_QK_K, 2 + 2 + _QK_K // 2 + 12),
    GgmlQuantType.Q5_K: (_QK_K, 2 + 2 + _QK_K // 2 + _QK_K // 8 + 12),
    GgmlQuantType.Q6_K: (_QK_K, 2 + _QK_K // 2 + _QK_K // 4 + _QK_K // 16),
    GgmlQuantType.Q8_K: (_QK_K, 4 + _QK_K + _QK_K // 8),
    GgmlQuantType.I8: (1, 1),
    GgmlQuantType.I16: (1, 2),
    GgmlQuantType.I32: (1, 4),
    GgmlQuantType.I64: (1, 8),
    GgmlQuantType.F64: (1, 8),
    GgmlQuantType.BF16: (1, 2),
}

_SCALAR_FORMATS: dict[GgufValueType, str] = {
    GgufValueType.UINT8: "<B",
    GgufValueType.INT8: "<b",
    GgufValueType.UINT16: "<H",
    GgufValueType.INT16: "<h",
    GgufValueType.UINT32: "<I",
    GgufValueType.INT32: "<i",
    GgufValueType.FLOAT32: "<f",
    GgufValueType.UINT64: "<Q",
    GgufValueType.INT64: "<q",
    GgufValueType.FLOAT64: "<d",
}

# Smallest possible wire size per value type; used to bound loop counts.
_MIN_VALUE_SIZE: dict[GgufValueType, int] = {
    GgufValueType.UINT8: 1, GgufValueType.INT8: 1,
    GgufValueType.UINT16: 2, GgufValueType.INT16: 2,
    GgufValueType.UINT32: 4, GgufValueType.INT32: 4,
    GgufValueType.FLOAT32: 4, GgufValueType.BOOL: 1,
    GgufValueType.STRING: 8, GgufValueType.ARRAY: 12,
    GgufValueType.UINT64: 8, GgufValueType.INT64: 8,
    GgufValueType.FLOAT64: 8,
}

_MIN_KV_SIZE = 8 + 4 + 1        # empty key + type tag + 1-byte value
_MIN_TENSOR_SIZE = 8 + 4 + 8 + 4 + 8  # empty name + n_dims + 1 dim + type + offset


@dataclass(frozen=True)
class GgufHeader:
    magic: bytes
    version: int
    tensor_count: int
    kv_count: int


@dataclass(frozen=True)
class GgufArray:
    elem_type: GgufValueType
    values: tuple


@dataclass(frozen=True)
class KvPair:
    key: str
    type: GgufValueType
    value: object


@dataclass(frozen=True)
class TensorInfo:
    name: str
    dims: tuple[int, ...]
    quant_type: GgmlQuantType
    offset: int  # bytes, relative to the aligned start of tensor data

    @property
    def n_elements(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n


@dataclass(frozen=True)
class TensorSpec:
    """Input to the fixture writer; offsets are computed by the writer."""

    name: str
    dims: tuple[int, ...]
    quant_type: GgmlQuantType


def tensor_byte_size(quant_type: GgmlQuantType | str, n_elements: int) -> int:
    """Exact byte size of a tensor: (elements / block elements) * block bytes."""
    if isinstance(quant_type, str):
        try:
            quant_type = GgmlQuantType[quant_type]
        except KeyError:
            raise UnknownType(f"unknown quantization type {quant_type!r}") from None
    block = QUANT_BLOCK_SIZES.get(quant_type)
    if block is None:
        raise UnknownType(f"no block table entry for {quant_type!r}")
    if n_elements <= 0:
        raise ValueError("n_elements must be positive")
    block_elements, block_bytes = block
    if n_elements % block_elements:
        raise NotBlockAligned(
            f"{n_elements} elements not a multiple of {quant_type.name}'s block of {block_elements}"
        )
    return (n_elements // block_elements) * block_bytes


@dataclass(frozen=True)
class FootprintReport:
    """Per-quantization-type and total byte footprints of a tensor table."""

    per_type: dict  # type name -> (tensor count, total bytes)
    total_bytes: int
    total_elements: int

    @property
    def bits_per_weight(self) -> float:
        if self.total_elements == 0:
            return 0.0
        return 8.0 * self.total_bytes / self.total_elements

    @property
    def total_gib(self) -> float:
        return self.total_bytes / 2**30

    def to_json_dict(self) -> dict:
        return {
            "per_type": {
                name: {"tensors": count, "bytes": nbytes, "gib": round(nbytes / 2**30, 2)}
                for name, (count, nbytes) in self.per_type.items()
            },
            "total_bytes": self.total_bytes,
            "total_gib": round(self.total_gib, 2),
            "total_elements": self.total_elements,
            "bits_per_weight": self.bits_per_weight,
        }


def footprint_report(tensors: list[TensorInfo]) -> FootprintReport:
    """Aggregate byte footprints by quantization type (binary GiB in the JSON form)."""
    per_type: dict[str, tuple[int, int]] = {}
    total_bytes = 0
    total_elements = 0
    for info in tensors:
        nbytes = tensor_byte_size(info.quant_type, info.n_elements)
        count, acc = per_type.get(info.quant_type.name, (0, 0))
        per_type[info.quant_type.name] = (count + 1, acc + nbytes)
        total_bytes += nbytes
        total_elements += info.n_elements
    return FootprintReport(dict(sorted(per_type.items())), total_bytes, total_elements)


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

class _Reader:
    """Bounded little-endian reader; every overrun raises TruncatedFile."""

    def __init__(self, fh, size: int):
        self.fh = fh
        self.size = size
        self.pos = 0

    def remaining(self) -> int:
        return self.size - self.pos

    def read_exact(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.size:
            raise TruncatedFile(f"need {n} bytes at offset {self.pos}, file has {self.size}")
        data = self.fh.read(n)
        if len(data) != n:
            raise TruncatedFile(f"short read at offset {self.pos}")
        self.pos += n
        return data

    def scalar(self, fmt: str):
        return struct.unpack(fmt, self.read_exact(struct.calcsize(fmt)))[0]

    def string(self, error: type[GgufError]) -> str:
        length = self.scalar("<Q")
        raw = self.read_exact(length)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise error(f"invalid UTF-8 string at offset {self.pos}: {exc}") from exc


def _read_value(reader: _Reader, type_id: int, depth: int = 0):
    try:
        vtype = GgufValueType(type_id)
    except ValueError:
        raise MalformedKv(f"unknown kv value type {type_id}") from None
    if vtype is GgufValueType.BOOL:
        raw = reader.scalar("<B")
        if raw not in (0, 1):
            raise MalformedKv(f"boolean byte must be 0 or 1, got {raw}")
        return raw == 1
    if vtype is GgufValueType.STRING:
        return reader.string(MalformedKv)
    if vtype is GgufValueType.ARRAY:
        if depth >= MAX_ARRAY_DEPTH:
            raise MalformedKv("array nesting too deep")
        elem_id = reader.scalar("<I")
        try:
            elem_type = GgufValueType(elem_id)
        except ValueError:
            raise MalformedKv(f"unknown array element type {elem_id}") from None
        count = reader.scalar("<Q")
        if count * _MIN_VALUE_SIZE[elem_type] > reader.remaining():
            raise TruncatedFile(f"array of {count} elements exceeds remaining bytes")
        values = tuple(_read_value(reader, elem_id, depth + 1) for _ in range(count))
        return GgufArray(elem_type, values)
    return reader.scalar(_SCALAR_FORMATS[vtype])


def _alignment_from_kvs(kvs: list[KvPair]) -> int:
    for kv in kvs:
        if kv.key == ALIGNMENT_KEY:
            if not isinstance(kv.value, int) or isinstance(kv.value, bool) or kv.value < 1:
                raise MalformedKv(f"{ALIGNMENT_KEY} must be a positive integer")
            return kv.value
    return DEFAULT_ALIGNMENT


def _align_up(offset: int, alignment: int) -> int:
    return (offset + alignment - 1) // alignment * alignment


def parse_gguf(path: str | Path) -> tuple[GgufHeader, list[KvPair], list[TensorInfo]]:
    """Decode header, typed metadata, and the tensor table; tensor data stays on disk."""
    path = Path(path)
    size = path.stat().st_size
    with path.open("rb") as fh:
        reader = _Reader(fh, size)

        magic = reader.read_exact(4)
        if magic != GGUF_MAGIC:
            raise BadMagic(f"expected {GGUF_MAGIC!r}, found {magic!r}")
        version = reader.scalar("<I")
        if version not in SUPPORTED_VERSIONS:
            raise UnsupportedVersion(f"GGUF version {version} not in {sorted(SUPPORTED_VERSIONS)}")
        tensor_count = reader.scalar("<Q")
        kv_count = reader.scalar("<Q")
        if kv_count * _MIN_KV_SIZE + tensor_count * _MIN_TENSOR_SIZE > reader.remaining():
            raise TruncatedFile("declared kv/tensor counts exceed file size")
        header = GgufHeader(magic, version, tensor_count, kv_count)

        kvs = []
        for _ in range(kv_count):
            key = reader.string(MalformedKv)
            type_id = reader.scalar("<I")
            value = _read_value(reader, type_id)
            kvs.append(KvPair(key, GgufValueType(type_id), value))

        tensors = []
        seen_names: set[str] = set()
        for _ in range(tensor_count):
            name = reader.string(MalformedTensor)
            if name in seen_names:
                raise MalformedTensor(f"duplicate tensor name {name!r}")
            seen_names.add(name)
            n_dims = reader.scalar("<I")
            if not 1 <= n_dims <= MAX_TENSOR_DIMS:
                raise MalformedTensor(f"tensor {name!r} has {n_dims} dims (max {MAX_TENSOR_DIMS})")
            dims = tuple(reader.scalar("<Q") for _ in range(n_dims))
            if any(d == 0 for d in dims):
                raise MalformedTensor(f"tensor {name!r} has a zero dimension")
            type_id = reader.scalar("<I")
            try:
                quant_type = GgmlQuantType(type_id)
            except ValueError:
                raise MalformedTensor(f"tensor {name!r} has unknown type id {type_id}") from None
            offset = reader.scalar("<Q")
            tensors.append(TensorInfo(name, dims, quant_type, offset))

        alignment = _alignment_from_kvs(kvs)
        data_region = size - _align_up(reader.pos, alignment)
        for info in tensors:
            if info.offset % alignment:
                raise MalformedTensor(
                    f"tensor {info.name!r} offset {info.offset} not aligned to {alignment}"
                )
            nbytes = tensor_byte_size(info.quant_type, info.n_elements)
            if info.offset + nbytes > data_region:
                raise TruncatedFile(
                    f"tensor {info.name!r} data [{info.offset}, {info.offset + nbytes}) "
                    f"exceeds the {max(data_region, 0)}-byte data region"
                )

    return header, kvs, tensors


# --------------------------------------------------------------------------
# fixture writing
# --------------------------------------------------------------------------

def _encode_string(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<Q", len(raw)) + raw


def _encode_value(vtype: GgufValueType, value, depth: int = 0) -> bytes:
    if vtype is GgufValueType.BOOL:
        if not isinstance(value, bool):
            raise UnsupportedKvType(f"expected bool, got {type(value).__name__}")
        return struct.pack("<B", int(value))
    if vtype is GgufValueType.STRING:
        if not isinstance(value, str):
            raise UnsupportedKvType(f"expected str, got {type(value).__name__}")
        return _encode_string(value)
    if vtype is GgufValueType.ARRAY:
        if not isinstance(value, GgufArray):
            raise UnsupportedKvType(f"expected GgufArray, got {type(value).__name__}")
        if depth >= MAX_ARRAY_DEPTH:
            raise UnsupportedKvType("array nesting too deep")
        body = b"".join(_encode_value(value.elem_type, v, depth + 1) for v in value.values)
        return struct.pack("<IQ", value.elem_type.value, len(value.values)) + body
    fmt = _SCALAR_FORMATS.get(vtype)
    if fmt is None:
        raise UnsupportedKvType(f"cannot encode value type {vtype!r}")
    try:
        return struct.pack(fmt, value)
    except struct.error as exc:
        raise UnsupportedKvType(f"{value!r} does not fit {vtype.name}: {exc}") from exc


def _synthetic_payload(nbytes: int) -> bytes:
    # Deterministic non-zero pattern so fixtures are not trivially all zeros.
    return bytes((i * 31 + 7) % 251 for i in range(nbytes))


def write_fixture_gguf(
    path: str | Path,
    kvs: list[KvPair],
    tensors: list[TensorSpec],
    version: int = 3,
    alignment: int = DEFAULT_ALIGNMENT,
) -> list[TensorInfo]:
    """Emit a small spec-conformant GGUF file with synthetic tensor payloads.

    Returns the tensor table as written (offsets included) so callers can
    compare a subsequent parse against it exactly.
    """
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedVersion(f"cannot write GGUF version {version}")
    if alignment < 1:
        raise ValueError("alignment must be >= 1")

    kvs = list(kvs)
    existing = [kv for kv in kvs if kv.key == ALIGNMENT_KEY]
    if existing:
        if existing[0].value != alignment:
            raise ValueError(f"{ALIGNMENT_KEY} kv contradicts alignment={alignment}")
    elif alignment != DEFAULT_ALIGNMENT:
        kvs.insert(0, KvPair(ALIGNMENT_KEY, GgufValueType.UINT32, alignment))

    infos: list[TensorInfo] = []
    sizes: list[int] = []
    offset = 0
    for spec in tensors:
        if not 1 <= len(spec.dims) <= MAX_TENSOR_DIMS:
            raise ValueError(f"tensor {spec.name!r} must have 1..{MAX_TENSOR_DIMS} dims")
        info = TensorInfo(spec.name, tuple(spec.dims), spec.quant_type, offset)
        nbytes = tensor_byte_size(info.quant_type, info.n_elements)
        infos.append(info)
        sizes.append(nbytes)
        offset = _align_up(offset + nbytes, alignment)

    blob = bytearray()
    blob += GGUF_MAGIC
    blob += struct.pack("<IQQ", version, len(infos), len(kvs))
    for kv in kvs:
        blob += _encode_string(kv.key)
        blob += struct.pack("<I", kv.type.value)
        blob += _encode_value(kv.type, kv.value)
    for info in infos:
        blob += _encode_string(info.name)
        blob += struct.pack("<I", len(info.dims))
        for dim in info.dims:
            blob += struct.pack("<Q", dim)
        blob += struct.pack("<IQ", info.quant_type.value, info.offset)

    # data_start is alignment-aligned, so aligning the absolute position after
    # each payload lands the next tensor exactly at data_start + its offset.
    blob += b"\x00" * (_align_up(len(blob), alignment) - len(blob))
    for nbytes in sizes:
        blob += _synthetic_payload(nbytes)
        blob += b"\x00" * (_align_up(len(blob), alignment) - len(blob))

    Path(path).write_bytes(bytes(blob))
    return infos
