"""Compile a snapped float network into an integer-only lookup-table model.

Every product of an activation level and a weight center is precomputed as
``round(level * center * 2**s / dx)``. Summing table entries then yields the
activation input in units of ``dx / 2**s``; adding the grid offset and
shifting right by ``s`` gives the bin of the activation index table directly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .activations import IDENTITY, ActivationSpec, GridSnap, default_table_len, snap_grid
from .clustering import WeightCodebook, assign_to_codebook
from .errors import CompileError, ConfigurationError, InvalidArgumentError, OverflowBoundError
from .network import DenseNet, Head, Layer


class LutHead(str, enum.Enum):
    ARGMAX = "argmax"
    REGRESSION = "regression"


@dataclass
class LutLayer:
    weight_index: np.ndarray  # (in_dim, out_dim) column indices into the table
    bias_index: np.ndarray  # (out_dim,)
    input_rows: np.ndarray  # incoming level index -> table row
    act_table: Optional[np.ndarray]  # (T,) level indices; None on the output layer
    sum_offset: int  # -x_origin / dx in units of 2**-s
    spec: ActivationSpec = IDENTITY  # snapped spec (metadata, never read at inference)

    @property
    def fan_in(self) -> int:
        return self.weight_index.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight_index.shape[1]


@dataclass
class LutModel:
    mult_table: np.ndarray  # (A + 1, |W|); row A is the bias row
    shift: int
    acc_bits: int
    guard_bits: int
    head: LutHead
    layers: list[LutLayer]
    dx: float
    origin_index: int
    half_phase: bool
    table_len: int
    row_values: np.ndarray  # activation value of each table row (A entries)
    centers: np.ndarray
    input_spec: ActivationSpec
    input_range: tuple[float, float] = (0.0, 1.0)
    meta: dict = field(default_factory=dict)

    @property
    def bias_row(self) -> int:
        return self.mult_table.shape[0] - 1

    @property
    def x_origin(self) -> float:
        return (self.origin_index + 0.5 * self.half_phase) * self.dx

    @property
    def fan_in_max(self) -> int:
        return max(l.fan_in for l in self.layers)

    @property
    def parameter_count(self) -> int:
        return sum(l.weight_index.size + l.bias_index.size for l in self.layers)

    @property
    def output_scale(self) -> tuple[int, float]:
        """Regression outputs are integers worth ``dx / 2**shift`` each."""
        return self.shift, self.dx

    def __eq__(self, other):
        if not isinstance(other, LutModel):
            return NotImplemented
        same = (self.shift == other.shift and self.acc_bits == other.acc_bits
                and self.guard_bits == other.guard_bits and self.head == other.head
                and self.dx == other.dx and self.origin_index == other.origin_index
                and self.half_phase == other.half_phase and self.table_len == other.table_len
                and self.input_spec == other.input_spec
                and tuple(self.input_range) == tuple(other.input_range)
                and np.array_equal(self.mult_table, other.mult_table)
                and np.array_equal(self.row_values, other.row_values)
                and np.array_equal(self.centers, other.centers)
                and len(self.layers) == len(other.layers))
        if not same:
            return False
        for a, b in zip(self.layers, other.layers):
            if not (np.array_equal(a.weight_index, b.weight_index)
                    and np.array_equal(a.bias_index, b.bias_index)
                    and np.array_equal(a.input_rows, b.input_rows)
                    and a.sum_offset == b.sum_offset and a.spec == b.spec
                    and ((a.act_table is None and b.act_table is None)
                         or (a.act_table is not None and b.act_table is not None
                             and np.array_equal(a.act_table, b.act_table)))):
                return False
        return True

    __hash__ = None


@dataclass
class CompileOptions:
    table_len: Optional[int] = None
    acc_bits: int = 64
    guard_bits: int = 8
    input_spec: Optional[ActivationSpec] = None


def round_half_away(x: Fraction) -> int:
    q = math.floor(abs(x) + Fraction(1, 2))
    return q if x >= 0 else -q


def scaled_entry(level: float, center: float, shift: int, dx: float) -> int:
    """``round(level * center * 2**shift / dx)`` evaluated exactly on the float inputs."""
    return round_half_away(Fraction(level) * Fraction(center) * (1 << shift) / Fraction(dx))


def precision_floor(fan_in_max: int, guard_bits: int) -> int:
    return math.ceil(math.log2(fan_in_max + 1)) + guard_bits


def choose_scale(fan_in_max: int, max_abs_activation: float, max_abs_weight: float, dx: float,
                 acc_bits: int = 64, guard_bits: int = 8, offset_cells: int = 0) -> int:
    """Largest shift ``s`` that keeps every accumulator sum inside ``acc_bits`` signed bits.

    ``s`` must also reach ``ceil(log2(fan_in_max + 1)) + guard_bits`` so the
    per-entry rounding, summed over a unit's inputs and bias, stays below
    ``2**-(guard_bits + 1)`` of one grid bin. ``offset_cells`` bounds the
    grid-offset term added before the shift, in bins.
    """
    if acc_bits not in (32, 64):
        raise InvalidArgumentError(f"acc_bits must be 32 or 64, got {acc_bits}")
    if fan_in_max < 1 or dx <= 0:
        raise InvalidArgumentError("fan_in_max >= 1 and dx > 0 required")
    floor_s = precision_floor(fan_in_max, guard_bits)
    limit = 1 << (acc_bits - 1)

    def fits(s: int) -> bool:
        entry = abs(scaled_entry(max_abs_activation, max_abs_weight, s, dx))
        return (fan_in_max + 1) * entry + offset_cells * (1 << s) < limit

    if not fits(floor_s):
        raise ConfigurationError(
            f"no feasible scale: s >= {floor_s} overflows a {acc_bits}-bit accumulator "
            f"(fan-in {fan_in_max}); use a wider accumulator or a smaller network")
    s = floor_s
    while s + 1 < acc_bits and fits(s + 1):
        s += 1
    return s


def build_mult_table(centers: Sequence[float], row_values: Sequence[float], shift: int, dx: float,
                     acc_bits: int = 64) -> np.ndarray:
    """``(len(row_values) + 1) x len(centers)`` table; the last row multiplies by 1.0 (bias)."""
    rows = [float(v) for v in row_values] + [1.0]
    cols = [Fraction(float(c)) for c in centers]
    scale = Fraction(1 << shift) / Fraction(dx)
    limit = 1 << (acc_bits - 1)
    table = np.empty((len(rows), len(cols)), dtype=np.int64)
    for i, a in enumerate(rows):
        fa = Fraction(a) * scale
        for k, c in enumerate(cols):
            v = round_half_away(fa * c)
            if abs(v) >= limit:
                raise OverflowBoundError(f"table entry ({i}, {k}) = {v} exceeds {acc_bits - 1} bits")
            table[i, k] = v
    return table


def table_positions(spec: ActivationSpec, dx: float, x_origin: float) -> np.ndarray:
    pos = (spec.bounds - x_origin) / dx
    grid = np.round(pos)
    if not np.allclose(pos, grid, rtol=0.0, atol=1e-6):
        raise CompileError("activation boundaries are not on the (dx, x_origin) grid")
    return grid.astype(np.int64)


def build_activation_index_table(spec: ActivationSpec, dx: float, x_origin: float, table_len: int) -> np.ndarray:
    """Level index for each grid bin ``[x_origin + t dx, x_origin + (t+1) dx)``."""
    positions = table_positions(spec, dx, x_origin)
    if positions.size and (positions.min() < 1 or positions.max() > table_len - 1):
        raise CompileError("snapped boundaries fall outside the interior of the table")
    table = np.searchsorted(positions, np.arange(table_len), side="right").astype(np.int64)
    if np.any(np.diff(table) < 0) or table.min() < 0 or table.max() >= spec.levels_count:
        raise CompileError("internal error: activation index table is not monotone")
    return table


def _row_map(spec: ActivationSpec, row_values: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(row_values, spec.levels)
    if not np.array_equal(row_values[np.minimum(idx, len(row_values) - 1)], spec.levels):
        raise CompileError("internal error: level missing from the table rows")
    return idx.astype(np.int64)


def unsnapped_parameters(net: DenseNet, codebook: WeightCodebook, limit: int = 20) -> list:
    out = []
    for li, layer in enumerate(net.layers):
        for name, p in (("weight", layer.weight), ("bias", layer.bias)):
            flat = p.astype(np.float64).ravel()
            bad = np.flatnonzero(codebook.centers[assign_to_codebook(flat, codebook)] != flat)
            for i in bad[: max(limit - len(out), 0)]:
                out.append((li, name, int(i), float(flat[i])))
            if len(out) >= limit:
                return out
    return out


def compile_model(net: DenseNet, codebook: Optional[WeightCodebook] = None,
                  options: Optional[CompileOptions] = None) -> LutModel:
    options = options or CompileOptions()
    codebook = codebook or net.codebook
    if codebook is None:
        raise CompileError("network has no weight codebook; train with clustering or snap it first")
    offenders = unsnapped_parameters(net, codebook)
    if offenders:
        raise CompileError(f"{len(offenders)}+ parameters are not codebook centers, e.g. {offenders[:3]}",
                           offenders)
    hidden = net.hidden_specs()
    if not hidden:
        raise CompileError("need at least one hidden layer with a bounded activation")
    if any(not s.bounded for s in hidden):
        raise CompileError("hidden activations must be bounded (tanhd or relu6d)")
    input_spec = options.input_spec or net.input_spec or hidden[0]

    distinct = list(dict.fromkeys(hidden))
    table_len = options.table_len or max(default_table_len(s) for s in distinct)
    grid: GridSnap = snap_grid(distinct, table_len)
    snapped = dict(zip(distinct, grid.specs))

    row_values = np.unique(np.concatenate([input_spec.levels] + [s.levels for s in distinct]))
    centers = codebook.centers
    fan_in_max = max(l.in_dim for l in net.layers)
    max_act = max(float(np.max(np.abs(row_values))), 1.0)
    max_w = float(np.max(np.abs(centers)))
    offset_cells = abs(grid.origin_index) + 1
    shift = choose_scale(fan_in_max, max_act, max_w, grid.dx, options.acc_bits, options.guard_bits,
                         offset_cells)
    table = build_mult_table(centers, row_values, shift, grid.dx, options.acc_bits)
    sum_offset = -(grid.origin_index << shift) - ((1 << (shift - 1)) if grid.half_phase else 0)
    bound = (fan_in_max + 1) * int(np.max(np.abs(table))) + abs(sum_offset)
    if bound >= 1 << (options.acc_bits - 1):
        raise OverflowBoundError(f"accumulator bound {bound} exceeds {options.acc_bits} bits")

    layers = []
    prev_spec = input_spec
    for layer in net.layers:
        spec = snapped.get(layer.activation, IDENTITY) if layer.activation.bounded else IDENTITY
        act_table = None
        if spec.bounded:
            act_table = build_activation_index_table(spec, grid.dx, grid.x_origin, table_len)
        layers.append(LutLayer(
            weight_index=assign_to_codebook(layer.weight.astype(np.float64), codebook).astype(np.int64),
            bias_index=assign_to_codebook(layer.bias.astype(np.float64), codebook).astype(np.int64),
            input_rows=_row_map(prev_spec, row_values),
            act_table=act_table,
            sum_offset=int(sum_offset) if spec.bounded else 0,
            spec=spec,
        ))
        prev_spec = layer.activation
    head = LutHead.ARGMAX if net.head is Head.SOFTMAX_CE else LutHead.REGRESSION
    return LutModel(mult_table=table, shift=shift, acc_bits=options.acc_bits, guard_bits=options.guard_bits,
                    head=head, layers=layers, dx=grid.dx, origin_index=grid.origin_index,
                    half_phase=grid.half_phase, table_len=table_len, row_values=row_values,
                    centers=np.asarray(centers, dtype=np.float64).copy(), input_spec=input_spec,
                    input_range=tuple(net.input_range),
                    meta={"max_displacement": grid.max_displacement})


def decompile(lut: LutModel) -> DenseNet:
    """Float network with the compiled weights and snapped activations (reference semantics)."""
    layers = []
    for layer in lut.layers:
        w = lut.centers[layer.weight_index]
        b = lut.centers[layer.bias_index]
        layers.append(Layer(w.copy(), b.copy(), layer.spec))
    head = Head.SOFTMAX_CE if lut.head is LutHead.ARGMAX else Head.L2
    cb = WeightCodebook(lut.centers, "kmeans")
    return DenseNet(layers, head, quantize=True, input_spec=lut.input_spec,
                    input_range=tuple(lut.input_range), codebook=cb)


def index_bits(codebook_size: int) -> int:
    return max(1, math.ceil(math.log2(codebook_size)))

