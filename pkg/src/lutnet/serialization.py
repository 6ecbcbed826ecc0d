"""Binary model files for training checkpoints and compiled lookup-table models.

Layout (all integers little-endian)::

    "QFGE"  u16 version  u16 kind  u16 section_count  u16 reserved
    section_count x (4-byte tag, u64 offset, u64 length)
    section payloads
    u32 CRC32 of every preceding byte

The byte-level description of each section lives in the README.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
import zlib
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import entropy
from .activations import ActivationSpec, Kind
from .clustering import Method, WeightCodebook, assign_to_codebook
from .compiler import LutHead, LutLayer, LutModel, index_bits
from .errors import ChecksumError, FormatError, InvalidArgumentError
from .network import DenseNet, Head, Layer

MAGIC = b"QFGE"
VERSION = 1
KIND_CHECKPOINT = 1
KIND_LUT = 2
ENCODINGS = ("raw", "huffman")

_PREAMBLE = struct.Struct("<4sHHHH")
_SECTION = struct.Struct("<4sQQ")

_KIND_CODES = {Kind.TANHD: 0, Kind.RELU6D: 1, Kind.IDENTITY: 2}
_HEAD_CODES = {Head.SOFTMAX_CE: 0, Head.L2: 1}
_LUT_HEAD_CODES = {LutHead.ARGMAX: 0, LutHead.REGRESSION: 1}
_METHOD_CODES = {Method.KMEANS: 0, Method.LAPLACIAN: 1}
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}

Model = Union[DenseNet, LutModel]


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def pack(self, fmt: str, *values) -> None:
        self.buf.write(struct.pack("<" + fmt, *values))

    def array(self, arr, dtype: str) -> None:
        self.buf.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())

    def raw(self, data: bytes) -> None:
        self.buf.write(data)

    def getvalue(self) -> bytes:
        return self.buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.pos = 0
        self.name = name

    def _take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"section {self.name} truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        st = struct.Struct("<" + fmt)
        values = st.unpack(self._take(st.size))
        return values if len(values) > 1 else values[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self._take(dt.itemsize * count), dtype=dt).astype(dt.newbyteorder("="))

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"section {self.name} has {len(self.data) - self.pos} trailing bytes")


# --------------------------------------------------------------------------
# shared pieces
# --------------------------------------------------------------------------


def _write_spec(w: _Writer, spec: ActivationSpec) -> None:
    w.pack("BIddd", _KIND_CODES[spec.kind], spec.levels_count, spec.gamma_min, spec.gamma_max, spec.step)
    w.array(spec.level_values, "f8")
    w.array(spec.boundaries, "f8")


def _read_spec(r: _Reader) -> ActivationSpec:
    code, count, gmin, gmax, step = r.unpack("BIddd")
    kinds = {v: k for k, v in _KIND_CODES.items()}
    if code not in kinds:
        raise FormatError(f"unknown activation kind code {code}")
    levels = tuple(float(v) for v in r.array("f8", count))
    bounds = tuple(float(v) for v in r.array("f8", max(count - 1, 0)))
    return ActivationSpec(kinds[code], count, gmin, gmax, step, levels, bounds)


def _write_indices(w: _Writer, indices: np.ndarray, alphabet: int, encoding: str) -> None:
    if encoding == "raw":
        width = index_bits(alphabet)
        payload, nbits = entropy.pack_fixed(indices, width)
        w.pack("BQIBQ", 0, indices.size, alphabet, width, nbits)
    else:
        enc = entropy.encode_indices(indices, alphabet)
        payload, nbits = enc.payload, enc.bit_length
        w.pack("BQIQ", 1, indices.size, alphabet, nbits)
        w.array(enc.lengths, "u1")
    w.raw(payload)


def _read_indices(r: _Reader) -> tuple[np.ndarray, int]:
    code, count, alphabet = r.unpack("BQI")
    if code == 0:
        width, nbits = r.unpack("BQ")
        if nbits != width * count:
            raise FormatError("raw index payload length does not match its count")
        idx = entropy.unpack_fixed(r.raw(math.ceil(nbits / 8)), width, count)
    elif code == 1:
        nbits = r.unpack("Q")
        lengths = r.array("u1", alphabet)
        payload = r.raw(math.ceil(nbits / 8))
        try:
            idx = entropy.decode_indices(entropy.EncodedIndices(lengths, payload, nbits, count))
        except (ValueError, IndexError) as exc:
            raise FormatError(f"corrupt entropy-coded indices: {exc}") from exc
    else:
        raise FormatError(f"unknown index encoding {code}")
    if idx.size and idx.max() >= alphabet:
        raise FormatError("index outside the codebook")
    return idx, alphabet


def _assemble(kind: int, sections: list[tuple[bytes, bytes]]) -> bytes:
    table_size = _PREAMBLE.size + _SECTION.size * len(sections)
    out = io.BytesIO()
    out.write(_PREAMBLE.pack(MAGIC, VERSION, kind, len(sections), 0))
    offset = table_size
    for tag, payload in sections:
        out.write(_SECTION.pack(tag, offset, len(payload)))
        offset += len(payload)
    for _, payload in sections:
        out.write(payload)
    body = out.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def _split(data: bytes) -> tuple[int, dict[bytes, bytes]]:
    if len(data) < _PREAMBLE.size + 4:
        raise FormatError(f"file truncated: {len(data)} bytes")
    magic, version, kind, count, _ = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    table_end = _PREAMBLE.size + _SECTION.size * count
    if table_end + 4 > len(data):
        raise FormatError("file truncated inside the section table")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("CRC32 mismatch; the file is corrupt or truncated")
    sections = {}
    for i in range(count):
        tag, offset, length = _SECTION.unpack_from(data, _PREAMBLE.size + i * _SECTION.size)
        if offset < table_end or offset + length > len(body):
            raise FormatError(f"section {tag!r} lies outside the file")
        sections[tag] = body[offset:offset + length]
    return kind, sections


def _section(sections: dict, tag: bytes) -> _Reader:
    if tag not in sections:
        raise FormatError(f"missing section {tag.decode()}")
    return _Reader(sections[tag], tag.decode())


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def _checkpoint_sections(net: DenseNet, encoding: str) -> list[tuple[bytes, bytes]]:
    dtype = net.layers[0].weight.dtype
    if any(p.dtype != dtype for p in net.parameters()) or dtype.itemsize not in _DTYPES:
        raise InvalidArgumentError("parameters must share one float32 or float64 dtype")
    h = _Writer()
    h.pack("BBBHdd", _HEAD_CODES[net.head], int(net.quantize), dtype.itemsize, len(net.layers),
           *map(float, net.input_range))
    h.pack("B", net.input_spec is not None)
    if net.input_spec is not None:
        _write_spec(h, net.input_spec)
    h.array(net.dims, "u4")
    for layer in net.layers:
        _write_spec(h, layer.activation)
    sections = [(b"HEAD", h.getvalue())]

    cb = net.codebook
    if cb is not None:
        c = _Writer()
        c.pack("BIdd", _METHOD_CODES[cb.method], cb.size, cb.mean_a, cb.scale_b)
        c.array(cb.centers, "f8")
        sections.append((b"CBOK", c.getvalue()))

    flat = net.flat_parameters()
    idx = assign_to_codebook(flat.astype(np.float64), cb) if cb is not None else None
    w = _Writer()
    if idx is not None and np.array_equal(cb.centers[idx].astype(dtype), flat):
        _write_indices(w, idx, cb.size, encoding)
        sections.append((b"WIDX", w.getvalue()))
    else:
        w.array(flat, dtype.str[1:])
        sections.append((b"WFLT", w.getvalue()))
    return sections


def _load_checkpoint(sections: dict) -> DenseNet:
    r = _section(sections, b"HEAD")
    head_code, quantize, itemsize, n_layers, lo, hi = r.unpack("BBBHdd")
    heads = {v: k for k, v in _HEAD_CODES.items()}
    if head_code not in heads or itemsize not in _DTYPES:
        raise FormatError("bad checkpoint header")
    input_spec = _read_spec(r) if r.unpack("B") else None
    dims = [int(d) for d in r.array("u4", n_layers + 1)]
    specs = [_read_spec(r) for _ in range(n_layers)]
    r.done()

    codebook = None
    if b"CBOK" in sections:
        c = _section(sections, b"CBOK")
        method, size, a, b = c.unpack("BIdd")
        centers = c.array("f8", size)
        c.done()
        methods = {v: k for k, v in _METHOD_CODES.items()}
        codebook = WeightCodebook(centers, methods[method], a, b)

    dtype = _DTYPES[itemsize].newbyteorder("=")
    count = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(n_layers))
    if b"WIDX" in sections:
        if codebook is None:
            raise FormatError("weight indices without a codebook")
        wr = _section(sections, b"WIDX")
        idx, _ = _read_indices(wr)
        wr.done()
        flat = codebook.centers[idx].astype(dtype)
    else:
        wr = _section(sections, b"WFLT")
        flat = wr.array(dtype.str[1:], count)
        wr.done()
    if flat.size != count:
        raise FormatError(f"expected {count} parameters, found {flat.size}")

    layers, pos = [], 0
    for i in range(n_layers):
        n_w, n_b = dims[i] * dims[i + 1], dims[i + 1]
        w = flat[pos:pos + n_w].reshape(dims[i], dims[i + 1]).copy()
        b = flat[pos + n_w:pos + n_w + n_b].copy()
        pos += n_w + n_b
        layers.append(Layer(w, b, specs[i]))
    return DenseNet(layers, heads[head_code], bool(quantize), input_spec, (lo, hi), codebook)


# --------------------------------------------------------------------------
# compiled models
# --------------------------------------------------------------------------


def _lut_sections(lut: LutModel, encoding: str) -> list[tuple[bytes, bytes]]:
    h = _Writer()
    h.pack("BHBBIqBdH", _LUT_HEAD_CODES[lut.head], lut.shift, lut.acc_bits, lut.guard_bits,
           lut.table_len, lut.origin_index, int(lut.half_phase), lut.dx, len(lut.layers))
    _write_spec(h, lut.input_spec)
    for layer in lut.layers:
        h.pack("IIqI", layer.fan_in, layer.out_dim, layer.sum_offset, layer.input_rows.size)
        h.array(layer.input_rows, "u4")
        _write_spec(h, layer.spec)

    m = _Writer()
    m.pack("II", *lut.mult_table.shape)
    m.array(lut.mult_table, "i8")

    a = _Writer()
    for layer in lut.layers:
        table = layer.act_table
        a.pack("I", 0 if table is None else table.size)
        if table is not None:
            a.array(table, "u2")

    w = _Writer()
    _write_indices(w, np.concatenate([np.concatenate([l.weight_index.ravel(), l.bias_index])
                                      for l in lut.layers]), lut.mult_table.shape[1], encoding)

    # float values behind the integer tables: needed to decompile for the
    # reference path, never read by the integer engine
    meta = _Writer()
    meta.pack("dd", *map(float, lut.input_range))
    meta.pack("I", lut.row_values.size)
    meta.array(lut.row_values, "f8")
    meta.pack("I", lut.centers.size)
    meta.array(lut.centers, "f8")
    extra = json.dumps(lut.meta, sort_keys=True).encode()
    meta.pack("I", len(extra))
    meta.raw(extra)
    return [(b"HEAD", h.getvalue()), (b"MTAB", m.getvalue()), (b"ATAB", a.getvalue()),
            (b"WIDX", w.getvalue()), (b"META", meta.getvalue())]


def _load_lut(sections: dict) -> LutModel:
    r = _section(sections, b"HEAD")
    head_code, shift, acc_bits, guard_bits, table_len, origin, half, dx, n_layers = r.unpack("BHBBIqBdH")
    heads = {v: k for k, v in _LUT_HEAD_CODES.items()}
    if head_code not in heads:
        raise FormatError(f"unknown head code {head_code}")
    input_spec = _read_spec(r)
    shapes = []
    for _ in range(n_layers):
        fan_in, out_dim, offset, n_rows = r.unpack("IIqI")
        rows = r.array("u4", n_rows).astype(np.int64)
        shapes.append((fan_in, out_dim, offset, rows, _read_spec(r)))
    r.done()

    m = _section(sections, b"MTAB")
    n_rows, n_cols = m.unpack("II")
    table = m.array("i8", n_rows * n_cols).reshape(n_rows, n_cols)
    m.done()

    a = _section(sections, b"ATAB")
    act_tables = []
    for _ in range(n_layers):
        size = a.unpack("I")
        act_tables.append(a.array("u2", size).astype(np.int64) if size else None)
    a.done()

    wr = _section(sections, b"WIDX")
    idx, _ = _read_indices(wr)
    wr.done()

    meta = _section(sections, b"META")
    lo, hi = meta.unpack("dd")
    row_values = meta.array("f8", meta.unpack("I"))
    centers = meta.array("f8", meta.unpack("I"))
    extra = json.loads(meta.raw(meta.unpack("I")).decode())
    meta.done()

    layers, pos = [], 0
    for (fan_in, out_dim, offset, rows, spec), act in zip(shapes, act_tables):
        n_w = fan_in * out_dim
        if pos + n_w + out_dim > idx.size:
            raise FormatError("weight index payload shorter than the layer shapes")
        layers.append(LutLayer(weight_index=idx[pos:pos + n_w].reshape(fan_in, out_dim).copy(),
                               bias_index=idx[pos + n_w:pos + n_w + out_dim].copy(),
                               input_rows=rows, act_table=act, sum_offset=offset, spec=spec))
        pos += n_w + out_dim
    if pos != idx.size:
        raise FormatError("weight index payload longer than the layer shapes")
    return LutModel(mult_table=table, shift=shift, acc_bits=acc_bits, guard_bits=guard_bits,
                    head=heads[head_code], layers=layers, dx=dx, origin_index=origin,
                    half_phase=bool(half), table_len=table_len, row_values=row_values,
                    centers=centers, input_spec=input_spec, input_range=(lo, hi), meta=extra)


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------


def _check_encoding(encoding: str) -> None:
    if encoding not in ENCODINGS:
        raise InvalidArgumentError(f"encoding must be one of {ENCODINGS}, got {encoding!r}")


def _sections_for(model: Model, encoding: str) -> tuple[int, list]:
    _check_encoding(encoding)
    if isinstance(model, LutModel):
        return KIND_LUT, _lut_sections(model, encoding)
    if isinstance(model, DenseNet):
        return KIND_CHECKPOINT, _checkpoint_sections(model, encoding)
    raise InvalidArgumentError(f"cannot serialize {type(model).__name__}")


def dumps(model: Model, encoding: str = "raw") -> bytes:
    return _assemble(*_sections_for(model, encoding))


def loads(data: bytes) -> Model:
    kind, sections = _split(bytes(data))
    try:
        if kind == KIND_CHECKPOINT:
            return _load_checkpoint(sections)
        if kind == KIND_LUT:
            return _load_lut(sections)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed model file: {exc}") from exc
    raise FormatError(f"unknown model kind {kind}")


def save_model(model: Model, path: str | os.PathLike, encoding: str = "raw") -> int:
    """Write ``model`` to ``path``; returns the number of bytes written."""
    data = dumps(model, encoding)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_model(path: str | os.PathLike) -> Model:
    with open(path, "rb") as fh:
        return loads(fh.read())


@dataclass(frozen=True)
class StorageReport:
    encoding: str
    parameter_count: int
    index_bits: int  # bits in the weight payload (indices, or raw floats when unsnapped)
    bits_per_index: float
    index_bytes: int
    table_bytes: int  # multiplication and activation tables
    other_bytes: int  # headers, codebook, metadata, checksum
    total_bytes: int

    @property
    def float32_bytes(self) -> int:
        return 4 * self.parameter_count

    @property
    def ratio_vs_float32(self) -> float:
        return self.total_bytes / self.float32_bytes

    @property
    def amortized_ratio(self) -> float:
        """Index payload plus tables, relative to float32 parameters."""
        return (self.index_bytes + self.table_bytes) / self.float32_bytes

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out.update(ratio_vs_float32=self.ratio_vs_float32, amortized_ratio=self.amortized_ratio)
        return out


def estimate_storage(model: Model, encoding: str = "raw") -> StorageReport:
    """Byte accounting of the file ``save_model(model, encoding=encoding)`` would write."""
    _check_encoding(encoding)
    _, sections = _sections_for(model, encoding)
    sizes = {tag: len(payload) for tag, payload in sections}
    total = _PREAMBLE.size + _SECTION.size * len(sections) + sum(sizes.values()) + 4
    count = model.parameter_count
    if b"WIDX" in sizes:
        r = _Reader(dict(sections)[b"WIDX"], "WIDX")
        code, _, _ = r.unpack("BQI")
        nbits = r.unpack("BQ")[1] if code == 0 else r.unpack("Q")
        weight_bytes = math.ceil(nbits / 8)
    else:
        nbits = 8 * sizes[b"WFLT"]
        weight_bytes = sizes[b"WFLT"]
    table = sizes.get(b"MTAB", 0) + sizes.get(b"ATAB", 0)
    return StorageReport(encoding=encoding, parameter_count=count, index_bits=int(nbits),
                         bits_per_index=nbits / count, index_bytes=weight_bytes, table_bytes=table,
                         other_bytes=total - weight_bytes - table, total_bytes=total)
