"""Global weight codebooks: 1-D k-means and the closed-form Laplacian L1 placement."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateClusteringError, InvalidArgumentError, LaplacianRecurrenceError


class Method(str, enum.Enum):
    KMEANS = "kmeans"
    LAPLACIAN = "laplacian"


@dataclass(frozen=True)
class WeightCodebook:
    centers: np.ndarray
    method: Method
    mean_a: float = 0.0
    scale_b: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim != 1 or c.size == 0:
            raise InvalidArgumentError("codebook needs a non-empty 1-D center array")
        if np.any(np.diff(c) <= 0):
            raise InvalidArgumentError("codebook centers must be strictly increasing")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "method", Method(self.method))

    @property
    def size(self) -> int:
        return int(self.centers.size)

    def __eq__(self, other):
        if not isinstance(other, WeightCodebook):
            return NotImplemented
        return (self.method == other.method and self.mean_a == other.mean_a
                and self.scale_b == other.scale_b
                and np.array_equal(self.centers, other.centers))

    __hash__ = None


def assign_to_codebook(values, codebook: WeightCodebook) -> np.ndarray:
    """Index of the nearest center for every value; exact ties go to the lower index."""
    c = codebook.centers
    mids = 0.5 * (c[:-1] + c[1:])
    return np.searchsorted(mids, np.asarray(values, dtype=np.float64), side="left")


def round_codebook(codebook: WeightCodebook, dtype) -> WeightCodebook:
    """Codebook whose centers are exactly representable in ``dtype``.

    Snapping float32 parameters to float64 centers would leave them a
    rounding error away from the codebook; centers that collide after
    rounding are merged.
    """
    c = np.unique(codebook.centers.astype(dtype).astype(np.float64))
    if np.array_equal(c, codebook.centers):
        return codebook
    return WeightCodebook(c, codebook.method, codebook.mean_a, codebook.scale_b)


def snap_values(values, codebook: WeightCodebook) -> np.ndarray:
    return codebook.centers[assign_to_codebook(values, codebook)]


def subsample(values, fraction: float, seed: int) -> np.ndarray:
    """Uniform sample without replacement of ``ceil(fraction * n)`` values."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidArgumentError(f"fraction must lie in (0, 1], got {fraction}")
    values = np.asarray(values, dtype=np.float64).ravel()
    size = math.ceil(fraction * values.size)
    rng = np.random.default_rng(seed)
    return rng.choice(values, size=size, replace=False)


def _sse(sorted_values: np.ndarray, splits: np.ndarray, centers: np.ndarray) -> float:
    labels = np.repeat(np.arange(centers.size), np.diff(np.concatenate([[0], splits, [sorted_values.size]])))
    return float(np.sum((sorted_values - centers[labels]) ** 2))


def kmeans_1d(values, k: int, max_iters: int = 100, seed: int = 0,
              init: Optional[Sequence[float]] = None,
              history: Optional[list] = None) -> WeightCodebook:
    """Lloyd's algorithm on scalars.

    Starts at the ``k`` evenly spaced quantiles of the data, or at ``init``
    (warm start) when it holds ``k`` distinct centers. An empty cluster is
    re-seeded at the value with the largest current quantization error.
    ``seed`` is accepted for interface symmetry; the procedure is
    deterministic. When ``history`` is a list, the within-cluster squared
    error after every iteration is appended to it.
    """
    del seed
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if k < 1 or x.size == 0:
        raise InvalidArgumentError("k >= 1 and non-empty values required")
    distinct = np.unique(x)
    if k > distinct.size:
        raise DegenerateClusteringError(f"k={k} exceeds {distinct.size} distinct values")
    if k == distinct.size:
        return WeightCodebook(distinct, Method.KMEANS)

    if init is not None and len(init) == k and np.all(np.diff(np.asarray(init, dtype=np.float64)) > 0):
        centers = np.asarray(init, dtype=np.float64).copy()
    else:
        centers = np.quantile(x, (np.arange(k) + 0.5) / k)

    prev_splits = None
    for _ in range(max_iters):
        centers = np.sort(centers)
        splits, counts = _partition(x, centers)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            centers = _reseed(x, centers, counts, empty)
            continue
        if prev_splits is not None and np.array_equal(splits, prev_splits):
            break
        prev_splits = splits
        starts = np.concatenate([[0], splits])
        # per-segment sums avoid the cancellation of a global cumsum; the
        # clip keeps rounding from pushing a mean outside its own segment
        means = np.add.reduceat(x, starts) / counts
        centers = np.clip(means, x[starts], x[starts + counts - 1])
        if history is not None:
            history.append(_sse(x, splits, centers))
    return WeightCodebook(np.sort(centers), Method.KMEANS)


def _partition(x: np.ndarray, centers: np.ndarray):
    # ties at a midpoint fall to the lower cluster
    mids = 0.5 * (centers[:-1] + centers[1:])
    splits = np.searchsorted(x, mids, side="right")
    return splits, np.diff(np.concatenate([[0], splits, [x.size]]))


def _reseed(x, centers, counts, empty):
    labels = np.repeat(np.arange(centers.size), counts)
    err = np.abs(x - centers[labels])
    centers = centers.copy()
    for j in empty:
        i = int(np.argmax(err))
        centers[j] = x[i]
        err[x == x[i]] = -1.0
    return centers


# --------------------------------------------------------------------------
# Laplacian L1 codebook
# --------------------------------------------------------------------------


def laplacian_levels(n: int) -> np.ndarray:
    """Positive levels ``L_1..L_K`` (``K = (n-1)/2``) of the L1-optimal Laplacian quantizer.

    ``L_i = L_{i-1} + D_i`` with ``D_i = -ln(1 - 2 exp(L_{i-1}) / n)`` and ``L_0 = 0``.
    """
    if n < 3 or n % 2 == 0:
        raise InvalidArgumentError(f"need an odd number of centers >= 3, got {n}")
    count = (n - 1) // 2
    out = np.empty(count)
    prev = 0.0
    for i in range(count):
        arg = 1.0 - 2.0 * math.exp(prev) / n
        if arg <= 0.0:
            raise LaplacianRecurrenceError(
                f"recurrence argument {arg:.3g} <= 0 after {i} of {count} levels", feasible_count=i)
        prev = prev - math.log(arg)
        out[i] = prev
    return out


def fit_laplacian_codebook(values, n: int, prev_codebook: Optional[WeightCodebook] = None) -> WeightCodebook:
    """Centers ``a`` and ``a +/- b L_i``, with ``b`` pinned to the extreme weight and nudged.

    ``prev_codebook`` is accepted so both codebook methods share a call shape;
    the closed form needs no warm start.
    """
    del prev_codebook
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidArgumentError("values must be non-empty")
    levels = laplacian_levels(n)
    outer, last_delta = levels[-1], levels[-1] - (levels[-2] if levels.size > 1 else 0.0)
    a = float(v.mean())
    w_max = float(np.max(np.abs(v - a)))
    if w_max == 0.0:
        raise DegenerateClusteringError("all values identical; no spread to scale the codebook")
    b = w_max / outer
    if w_max < 0.5:
        b = (b * outer + b * last_delta / (2.0 * (1.0 - w_max))) / outer
    elif w_max > 1.25:
        b = (b * outer - 0.25 * b * last_delta) / outer
    centers = np.concatenate([a - b * levels[::-1], [a], a + b * levels])
    return WeightCodebook(centers, Method.LAPLACIAN, mean_a=a, scale_b=b)


def fit_codebook(values, method: Method | str, size: int, prev: Optional[WeightCodebook] = None,
                 max_iters: int = 100) -> WeightCodebook:
    method = Method(method)
    if method is Method.KMEANS:
        init = prev.centers if prev is not None and prev.size == size else None
        return kmeans_1d(values, size, max_iters=max_iters, init=init)
    return fit_laplacian_codebook(values, size, prev)
