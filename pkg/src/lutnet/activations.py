"""Quantized activation functions and their input-space bin boundaries.

An activation with ``L`` levels emits one of ``L`` equally spaced outputs
between the extremes of its underlying function. Training needs the forward
quantizer and the underlying derivative; the integer engine needs the
input-space boundaries, snapped onto a uniform grid so that a bit shift can
replace a boundary scan.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import InfeasibleTableError, InvalidArgumentError

RELU_CAP = 6.0


class Kind(str, enum.Enum):
    TANHD = "tanhd"
    RELU6D = "relu6d"
    IDENTITY = "identity"


@dataclass(frozen=True)
class ActivationSpec:
    kind: Kind
    levels_count: int
    gamma_min: float
    gamma_max: float
    step: float
    level_values: tuple[float, ...]
    boundaries: tuple[float, ...]

    @property
    def bounded(self) -> bool:
        return self.kind is not Kind.IDENTITY

    @cached_property
    def levels(self) -> np.ndarray:
        return np.asarray(self.level_values, dtype=np.float64)

    @cached_property
    def bounds(self) -> np.ndarray:
        return np.asarray(self.boundaries, dtype=np.float64)

    def with_boundaries(self, boundaries: Sequence[float]) -> "ActivationSpec":
        new = replace(self, boundaries=tuple(float(b) for b in boundaries))
        _check_invariants(new)
        return new


IDENTITY = ActivationSpec(Kind.IDENTITY, 0, -math.inf, math.inf, 0.0, (), ())


def _check_invariants(spec: ActivationSpec) -> None:
    lv = np.asarray(spec.level_values)
    bd = np.asarray(spec.boundaries)
    if len(lv) != spec.levels_count or len(bd) != spec.levels_count - 1:
        raise InvalidArgumentError("level/boundary counts do not match levels_count")
    if np.any(np.diff(lv) <= 0):
        raise InvalidArgumentError("level values must be strictly increasing")
    if np.any(np.diff(bd) <= 0):
        raise InvalidArgumentError("boundaries must be strictly increasing")


def build_activation(kind: Kind | str, levels: int) -> ActivationSpec:
    """Build the quantized non-linearity ``kind`` with ``levels`` outputs.

    TanhD boundaries are the preimages under tanh of the midpoints between
    adjacent output levels, so binning the input against them reproduces
    rounding tanh's output to the nearest level. ReLU6D boundaries are the
    midpoints themselves (uniform pitch ``6 / (levels - 1)``).
    """
    kind = Kind(kind)
    if kind is Kind.IDENTITY:
        raise InvalidArgumentError("identity activation has no quantization levels")
    if int(levels) != levels or levels < 2:
        raise InvalidArgumentError(f"need at least 2 levels, got {levels}")
    levels = int(levels)
    if kind is Kind.TANHD:
        lo, hi = -1.0, 1.0
    else:
        lo, hi = 0.0, RELU_CAP
    span = hi - lo
    step = span / (levels - 1)
    j = np.arange(levels)
    values = lo + j * step
    values[-1] = hi
    # (2j+1)/(2(L-1)) keeps the central midpoint of symmetric ranges exactly at zero
    mids = lo + (2 * j[:-1] + 1) / (2 * (levels - 1)) * span
    if kind is Kind.TANHD:
        bounds = np.arctanh(mids)
    else:
        bounds = mids
    spec = ActivationSpec(kind, levels, lo, hi, step,
                          tuple(float(v) for v in values), tuple(float(b) for b in bounds))
    _check_invariants(spec)
    return spec


def underlying(spec: ActivationSpec, x):
    """The smooth function the quantizer is built around."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind is Kind.TANHD:
        return np.tanh(x)
    if spec.kind is Kind.RELU6D:
        return np.clip(x, 0.0, RELU_CAP)
    return x


def derivative_underlying(spec: ActivationSpec, x):
    """Straight-through local derivative; independent of the level count."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind is Kind.TANHD:
        t = np.tanh(x)
        out = 1.0 - t * t
    elif spec.kind is Kind.RELU6D:
        out = ((x > 0.0) & (x < RELU_CAP)).astype(np.float64)
    else:
        out = np.ones_like(x)
    return out if out.ndim else float(out)


def quantize_indices(spec: ActivationSpec, x) -> np.ndarray:
    """Level index for each input: the number of boundaries at or below it."""
    if not spec.bounded:
        raise InvalidArgumentError("identity activation has no levels")
    x = np.asarray(x)
    if x.size < 256:
        return np.searchsorted(spec.bounds, x.astype(np.float64), side="right")
    # output-space rounding lands within a level or two of the answer; the
    # boundary comparisons below make the result exact
    top = spec.levels_count - 1
    nan = np.isnan(x)
    if nan.any():
        # boundary search sorts NaN above everything
        out = np.full(x.shape, top, dtype=np.intp)
        out[~nan] = quantize_indices(spec, x[~nan])
        return out
    guess = np.floor((underlying(spec, x) - spec.gamma_min) / spec.step + 0.5)
    idx = np.clip(guess, 0, top).astype(np.intp)
    padded = np.concatenate([[-np.inf], spec.bounds, [np.inf]])
    while True:
        up = (x >= padded[idx + 1]) & (idx < top)
        down = x < padded[idx]
        if not (up.any() or down.any()):
            return np.clip(idx, 0, top)
        idx = idx + up - down


def gamma_d(spec: ActivationSpec, x) -> np.ndarray:
    return spec.levels[quantize_indices(spec, x)]


def quantize_value(spec: ActivationSpec, x: float) -> tuple[int, float]:
    if not math.isfinite(x):
        raise InvalidArgumentError("input must be finite")
    idx = int(quantize_indices(spec, x))
    return idx, spec.level_values[idx]


# --------------------------------------------------------------------------
# Grid snapping
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSnap:
    """Uniform grid shared by one or more snapped activations.

    Grid lines sit at ``(k + phase) * dx`` for integer ``k`` with ``phase``
    either 0 or 1/2. Table bin ``t`` covers
    ``[x_origin + t*dx, x_origin + (t+1)*dx)`` where
    ``x_origin = (origin_index + phase) * dx``.
    """

    dx: float
    origin_index: int
    half_phase: bool
    table_len: int
    specs: tuple[ActivationSpec, ...]
    max_displacement: float
    positions: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def x_origin(self) -> float:
        return (self.origin_index + 0.5 * self.half_phase) * self.dx

    @property
    def spec(self) -> ActivationSpec:
        return self.specs[0]

    def __iter__(self):
        # (dx, x_origin, snapped spec) unpacking for the single-spec case
        return iter((self.dx, self.x_origin, self.spec))


def _assign(bounds: np.ndarray, dx: np.ndarray, phase: float):
    """Nearest grid index (half-up) of every boundary for each candidate pitch."""
    n = np.floor(bounds[None, :] / dx[:, None] - phase + 0.5).astype(np.int64)
    disp = np.abs(bounds[None, :] - (n + phase) * dx[:, None]).max(axis=1)
    return n, disp


def _feasible(n: np.ndarray, groups: list[np.ndarray], table_len: int) -> np.ndarray:
    ok = (n.max(axis=1) - n.min(axis=1)) <= table_len - 2
    for g in groups:
        if len(g) > 1:
            ok &= np.all(np.diff(n[:, g], axis=1) > 0, axis=1)
    return ok


def _repair(n: np.ndarray) -> np.ndarray:
    """Smallest strictly increasing assignment at or above each row of ``n``."""
    steps = np.arange(n.shape[1])
    return np.maximum.accumulate(n - steps, axis=1) + steps


def _minimax_pitch(bounds: np.ndarray, m: np.ndarray) -> float | None:
    """Pitch minimizing max |b_j - m_j dx| for a fixed grid assignment (LP)."""
    a_ub = np.concatenate([np.stack([-m, -np.ones_like(m)], axis=1),
                           np.stack([m, -np.ones_like(m)], axis=1)])
    b_ub = np.concatenate([-bounds, bounds])
    res = linprog([0.0, 1.0], A_ub=a_ub, b_ub=b_ub,
                  bounds=[(1e-12, None), (0.0, None)], method="highs")
    return float(res.x[0]) if res.success else None


def snap_grid(specs: Sequence[ActivationSpec], table_len: int, scan_points: int = 4096) -> GridSnap:
    """Snap the boundaries of all ``specs`` onto one grid of ``table_len`` bins.

    The pitch minimizes the largest boundary displacement, subject to every
    spec keeping distinct boundaries and all boundaries landing on interior
    table lines ``1..table_len-1`` (so both end bins keep the extreme
    levels under clamping). Ties go to the finer pitch, then to phase 0.
    """
    specs = tuple(specs)
    if not specs or any(not s.bounded for s in specs):
        raise InvalidArgumentError("snapping needs bounded activations")
    max_levels = max(s.levels_count for s in specs)
    if table_len < max_levels:
        raise InfeasibleTableError(f"table length {table_len} < level count {max_levels}")

    union = np.unique(np.concatenate([s.bounds for s in specs]))
    if not np.all(np.isfinite(union)):
        raise InvalidArgumentError("boundaries must be finite")
    groups = [np.searchsorted(union, s.bounds) for s in specs]

    if len(union) == 1:
        b = float(union[0])
        dx = max(s.step for s in specs)
        k = b / dx
        half = bool(abs(k - round(k)) > 1e-9 and abs(k - math.floor(k) - 0.5) <= 1e-9)
        best = (0.0, dx, half, np.array([round(k - 0.5 * half)], dtype=np.int64))
    else:
        span = float(union[-1] - union[0])
        min_gap = min(float(np.min(np.diff(s.bounds))) for s in specs if s.levels_count > 2) \
            if max_levels > 2 else span
        lo = span / (table_len - 1)
        hi = max(2.0 * min_gap, lo * (1 + 1e-6))
        grid = np.linspace(lo, hi, scan_points)
        candidates = []
        for half in (False, True):
            phase = 0.5 * half
            n, disp = _assign(union, grid, phase)
            ok = _feasible(n, groups, table_len)
            for i in np.flatnonzero(ok):
                candidates.append((float(disp[i]), float(grid[i]), half, n[i]))
        if not candidates:
            # nearest rounding collides everywhere (tight tables, uneven
            # boundaries); push colliding boundaries onto the next free line
            for half in (False, True):
                n, _ = _assign(union, grid, 0.5 * half)
                # consecutive lines centred on the middle boundary always fit
                mid = len(union) // 2
                packed = n[:, mid:mid + 1] + np.arange(len(union)) - mid
                for i, row in enumerate(np.concatenate([_repair(n), packed])):
                    i %= len(grid)
                    if row.max() - row.min() <= table_len - 2:
                        disp = float(np.max(np.abs(union - (row + 0.5 * half) * grid[i])))
                        candidates.append((disp, float(grid[i]), half, row))
        if not candidates:
            raise InfeasibleTableError(
                f"no pitch keeps {len(union)} boundaries distinct within {table_len} bins")
        candidates.sort(key=lambda c: (c[0], c[1], c[2]))
        refined, seen = [], set()
        for disp0, dx0, half, n0 in candidates:
            key = (half, tuple(n0))
            if key in seen:
                continue
            seen.add(key)
            phase = 0.5 * half
            # the assignment stays fixed; only the pitch moves
            dx = _minimax_pitch(union, n0 + phase) or dx0
            disp = float(np.max(np.abs(union - (n0 + phase) * dx)))
            if disp > disp0:
                dx, disp = dx0, disp0
            refined.append((disp, dx, half, n0))
            if len(seen) >= 16:
                break
        top = min(r[0] for r in refined)
        best = min((r for r in refined if r[0] <= top + 1e-12), key=lambda r: (r[1], r[2]))

    disp, dx, half, n = best
    phase = 0.5 * half
    pad = ((table_len - 2) - int(n.max() - n.min())) // 2
    origin_index = int(n.min()) - 1 - pad
    snapped_union = (n + phase) * dx
    snapped_specs, positions = [], []
    for s, g in zip(specs, groups):
        snapped_specs.append(s.with_boundaries(snapped_union[g]))
        positions.append(tuple(int(v) for v in n[g] - origin_index))
    return GridSnap(dx=float(dx), origin_index=origin_index, half_phase=half,
                    table_len=int(table_len), specs=tuple(snapped_specs),
                    max_displacement=float(disp), positions=tuple(positions))


def snap_boundaries(spec: ActivationSpec, table_len: int) -> GridSnap:
    return snap_grid([spec], table_len)


def default_table_len(spec: ActivationSpec) -> int:
    # uniform boundaries need no extra resolution
    return spec.levels_count if spec.kind is Kind.RELU6D else 8 * spec.levels_count
