"""Integer-only forward pass over a compiled lookup-table model.

Only table lookups, integer additions, comparisons and arithmetic right
shifts happen here. This module is audited by a test that rejects any
multiplication, division, power or floating-point construct in its source,
so keep it that way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# log2 bound on the (batch, fan_in, fan_out) gather buffer
_GATHER_BITS = 22


@dataclass
class IntTrace:
    level_indices: list = field(default_factory=list)
    sums: list = field(default_factory=list)


def _layer_sums(mult_table: np.ndarray, bias_row: int, layer, rows: np.ndarray) -> np.ndarray:
    w_idx = layer.weight_index
    bias_terms = mult_table[bias_row, layer.bias_index]
    chunk = 1 << max(0, _GATHER_BITS - int(w_idx.size).bit_length())
    out = np.empty((rows.shape[0], w_idx.shape[1]), dtype=mult_table.dtype)
    for start in range(0, rows.shape[0], chunk):
        r = rows[start:start + chunk]
        terms = mult_table[r[:, :, None], w_idx[None, :, :]]
        out[start:start + chunk] = terms.sum(axis=1, dtype=mult_table.dtype) + bias_terms
    return out


def forward_int(lut, input_indices, trace: bool = False, check_overflow: bool = False):
    """Run ``lut`` on a batch of input level indices.

    Returns class indices (argmax head; ties resolve to the lowest class) or
    the raw integer output sums (regression head; see ``lut.output_scale``).
    With ``trace`` a second value holds every layer's level indices and sums.
    """
    idx = np.asarray(input_indices)
    if idx.dtype.kind not in "iu":
        raise TypeError("forward_int takes integer level indices")
    if idx.ndim == 1:
        idx = idx[None, :]
    if idx.shape[1] != lut.layers[0].fan_in:
        raise ValueError(f"expected {lut.layers[0].fan_in} inputs, got {idx.shape[1]}")
    table = lut.mult_table
    shift = lut.shift
    last_bin = lut.table_len - 1
    acc_limit = (1 << (lut.acc_bits - 1)) - 1
    record = IntTrace()
    sums = None
    for layer in lut.layers:
        rows = layer.input_rows[idx]
        sums = _layer_sums(table, lut.bias_row, layer, rows)
        if check_overflow:
            assert int(np.abs(sums).max()) < acc_limit, "accumulator overflow"
        if trace:
            record.sums.append(sums)
        if layer.act_table is None:
            break
        bins = np.right_shift(sums + layer.sum_offset, shift)
        idx = layer.act_table[np.clip(bins, 0, last_bin)]
        if trace:
            record.level_indices.append(idx)
    if lut.head.value == "argmax":
        out = np.argmax(sums, axis=1)
    else:
        out = sums
    return (out, record) if trace else out
