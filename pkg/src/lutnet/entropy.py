"""Canonical Huffman coding of weight-index streams (marginal, non-adaptive)."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

MAX_CODE_LEN = 63
_FAST_DECODE_BITS = 20


@dataclass(frozen=True)
class EncodedIndices:
    lengths: np.ndarray  # code length per symbol, 0 = unused
    payload: bytes
    bit_length: int
    count: int

    @property
    def bits_per_index(self) -> float:
        return self.bit_length / self.count if self.count else 0.0


def code_lengths(counts) -> np.ndarray:
    """Huffman code length of each symbol; a lone used symbol gets length 1."""
    counts = np.asarray(counts, dtype=np.int64)
    lengths = np.zeros(counts.size, dtype=np.int64)
    used = np.flatnonzero(counts > 0)
    if used.size == 0:
        return lengths
    if used.size == 1:
        lengths[used[0]] = 1
        return lengths
    # heap items: (weight, tiebreak, symbols in subtree)
    heap = [(int(counts[s]), int(s), [int(s)]) for s in used]
    heapq.heapify(heap)
    tiebreak = counts.size
    while len(heap) > 1:
        w1, _, s1 = heapq.heappop(heap)
        w2, _, s2 = heapq.heappop(heap)
        lengths[s1] += 1
        lengths[s2] += 1
        heapq.heappush(heap, (w1 + w2, tiebreak, s1 + s2))
        tiebreak += 1
    if lengths.max() > MAX_CODE_LEN:
        raise ValueError("code length exceeds 63 bits")
    return lengths


def canonical_codes(lengths) -> np.ndarray:
    """Canonical code values: symbols ordered by (length, symbol) get consecutive codes."""
    lengths = np.asarray(lengths, dtype=np.int64)
    codes = np.zeros(lengths.size, dtype=np.uint64)
    order = sorted(np.flatnonzero(lengths > 0), key=lambda s: (lengths[s], s))
    code, prev = 0, 0
    for s in order:
        code <<= int(lengths[s]) - prev
        prev = int(lengths[s])
        codes[s] = code
        code += 1
    return codes


def _pack(values: np.ndarray, widths: np.ndarray, chunk: int = 1 << 16) -> tuple[bytes, int]:
    """Concatenate ``values[i]`` as ``widths[i]``-bit big-endian fields, MSB first."""
    if values.size == 0:
        return b"", 0
    m = int(widths.max())
    k = np.arange(m, dtype=np.int64)
    parts = []
    for start in range(0, values.size, chunk):
        v = values[start:start + chunk]
        shifts = widths[start:start + chunk, None] - 1 - k[None, :]
        bits = (v[:, None] >> np.maximum(shifts, 0).astype(np.uint64)) & np.uint64(1)
        parts.append(bits[shifts >= 0].astype(np.uint8))
    flat = np.concatenate(parts)
    return np.packbits(flat).tobytes(), int(flat.size)


def encode_indices(indices, alphabet_size: int) -> EncodedIndices:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= alphabet_size):
        raise ValueError("index outside the alphabet")
    lengths = code_lengths(np.bincount(idx, minlength=alphabet_size))
    codes = canonical_codes(lengths)
    payload, nbits = _pack(codes[idx], lengths[idx])
    return EncodedIndices(lengths.astype(np.uint8), payload, nbits, int(idx.size))


def decode_indices(encoded: EncodedIndices) -> np.ndarray:
    lengths = np.asarray(encoded.lengths, dtype=np.int64)
    n = encoded.count
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    bits = np.unpackbits(np.frombuffer(encoded.payload, dtype=np.uint8))[: encoded.bit_length]
    max_len = int(lengths.max())
    if max_len <= _FAST_DECODE_BITS:
        return _decode_table(bits, lengths, n, max_len)
    return _decode_canonical(bits, lengths, n)


def _decode_table(bits: np.ndarray, lengths: np.ndarray, n: int, m: int) -> np.ndarray:
    codes = canonical_codes(lengths)
    sym_of = np.full(1 << m, -1, dtype=np.int64)
    len_of = np.zeros(1 << m, dtype=np.int64)
    for s in np.flatnonzero(lengths > 0):
        l = int(lengths[s])
        start = int(codes[s]) << (m - l)
        sym_of[start:start + (1 << (m - l))] = s
        len_of[start:start + (1 << (m - l))] = l
    padded = np.concatenate([bits, np.zeros(m, dtype=np.uint8)]).astype(np.int64)
    window = np.zeros(bits.size, dtype=np.int64)
    for k in range(m):
        window = (window << 1) | padded[k:k + bits.size]
    out = np.empty(n, dtype=np.int64)
    pos = 0
    win = window.tolist()
    sym_l = sym_of.tolist()
    len_l = len_of.tolist()
    for i in range(n):
        w = win[pos]
        s = sym_l[w]
        if s < 0:
            raise ValueError(f"invalid code at bit {pos}")
        out[i] = s
        pos += len_l[w]
    if pos != bits.size:
        raise ValueError("trailing bits after the last symbol")
    return out


def _decode_canonical(bits: np.ndarray, lengths: np.ndarray, n: int) -> np.ndarray:
    max_len = int(lengths.max())
    per_len = [sorted(np.flatnonzero(lengths == l)) for l in range(max_len + 1)]
    first_code, code = [0] * (max_len + 2), 0
    for l in range(1, max_len + 1):
        code = (code + len(per_len[l - 1])) << 1 if l > 1 else 0
        first_code[l] = code
    out = np.empty(n, dtype=np.int64)
    pos = 0
    blist = bits.tolist()
    for i in range(n):
        code, l = 0, 0
        while True:
            code = (code << 1) | blist[pos]
            pos += 1
            l += 1
            offset = code - first_code[l]
            if 0 <= offset < len(per_len[l]):
                out[i] = per_len[l][offset]
                break
            if l >= max_len:
                raise ValueError(f"invalid code ending at bit {pos}")
    return out


def pack_fixed(indices, width: int) -> tuple[bytes, int]:
    idx = np.asarray(indices, dtype=np.uint64).ravel()
    return _pack(idx, np.full(idx.size, width, dtype=np.int64))


def unpack_fixed(payload: bytes, width: int, count: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[: width * count]
    bits = bits.reshape(count, width).astype(np.int64)
    out = np.zeros(count, dtype=np.int64)
    for k in range(width):
        out = (out << 1) | bits[:, k]
    return out


def empirical_entropy(indices) -> float:
    counts = np.bincount(np.asarray(indices, dtype=np.int64).ravel())
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())
