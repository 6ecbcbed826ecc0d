import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lutnet.activations import (IDENTITY, Kind, build_activation, default_table_len, derivative_underlying,
                                gamma_d, quantize_indices, quantize_value, snap_boundaries, snap_grid)
from lutnet.errors import InfeasibleTableError, InvalidArgumentError


def test_tanhd4_levels_and_boundaries():
    spec = build_activation("tanhd", 4)
    np.testing.assert_allclose(spec.levels, [-1, -1 / 3, 1 / 3, 1], atol=1e-15)
    want = [math.atanh(-2 / 3), 0.0, math.atanh(2 / 3)]
    np.testing.assert_allclose(spec.bounds, want, atol=1e-15)


def test_relu6d4_boundaries_are_uniform():
    spec = build_activation(Kind.RELU6D, 4)
    assert spec.level_values == (0.0, 2.0, 4.0, 6.0)
    assert spec.boundaries == (1.0, 3.0, 5.0)
    assert spec.step == 2.0


def test_level_count_is_validated():
    with pytest.raises(InvalidArgumentError):
        build_activation("tanhd", 1)
    with pytest.raises(InvalidArgumentError):
        build_activation("identity", 4)
    with pytest.raises(InvalidArgumentError):
        quantize_indices(IDENTITY, [0.0])


def test_exact_boundary_goes_to_upper_level():
    spec = build_activation("relu6d", 4)
    assert quantize_value(spec, 3.0) == (2, 4.0)
    assert quantize_value(spec, np.nextafter(3.0, 0.0)) == (1, 2.0)
    # the fast path (large arrays) must agree on exact boundaries too
    x = np.tile(np.asarray(spec.boundaries), 200)
    assert np.array_equal(quantize_indices(spec, x), np.tile([1, 2, 3], 200))


def test_saturation_and_non_finite():
    spec = build_activation("tanhd", 8)
    assert quantize_value(spec, -50.0) == (0, -1.0)
    assert quantize_value(spec, 50.0) == (7, 1.0)
    with pytest.raises(InvalidArgumentError):
        quantize_value(spec, math.nan)


@given(st.sampled_from(["tanhd", "relu6d"]), st.integers(2, 300),
       st.lists(st.floats(-12, 12) | st.sampled_from([np.inf, -np.inf, np.nan]), min_size=256, max_size=600))
def test_fast_quantizer_matches_boundary_search(kind, levels, xs):
    spec = build_activation(kind, levels)
    x = np.asarray(xs)
    assert np.array_equal(quantize_indices(spec, x), np.searchsorted(spec.bounds, x, side="right"))


@given(st.integers(2, 256), st.floats(-6, 6))
def test_tanhd_is_nearest_level_of_tanh(levels, x):
    spec = build_activation("tanhd", levels)
    y = float(gamma_d(spec, x))
    assert y in spec.level_values
    assert abs(y - math.tanh(x)) <= spec.step / 2 + 1e-12


@given(st.integers(2, 64), st.floats(-8, 8), st.floats(-8, 8))
def test_quantizer_is_monotone(levels, a, b):
    spec = build_activation("tanhd", levels)
    lo, hi = sorted((a, b))
    assert quantize_indices(spec, lo) <= quantize_indices(spec, hi)


def test_straight_through_derivatives():
    x = np.linspace(-3, 7, 101)
    tanh_spec = build_activation("tanhd", 16)
    h = 1e-6
    fd = (np.tanh(x + h) - np.tanh(x - h)) / (2 * h)
    np.testing.assert_allclose(derivative_underlying(tanh_spec, x), fd, atol=1e-8)
    relu = derivative_underlying(build_activation("relu6d", 16), np.array([-1.0, 0.5, 5.9, 6.5]))
    assert relu.tolist() == [0.0, 1.0, 1.0, 0.0]
    assert derivative_underlying(IDENTITY, 3.0) == 1.0


# --------------------------------------------------------------------------
# grid snapping
# --------------------------------------------------------------------------


def brute_force_pitch(bounds, table_len, pitches):
    """Smallest max displacement over a dense pitch scan, both grid phases (oracle)."""
    best = math.inf
    for dx in pitches:
        for phase in (0.0, 0.5):
            n = np.floor(bounds / dx - phase + 0.5)
            if np.any(np.diff(n) <= 0) or n.max() - n.min() > table_len - 2:
                continue
            best = min(best, float(np.max(np.abs(bounds - (n + phase) * dx))))
    return best


def test_tanhd6_on_twelve_bins_matches_published_pitch():
    snap = snap_boundaries(build_activation("tanhd", 6), 12)
    assert snap.dx == pytest.approx(0.218, abs=1e-3)
    oracle = brute_force_pitch(build_activation("tanhd", 6).bounds, 12, np.linspace(0.15, 0.35, 20001))
    assert snap.max_displacement <= oracle + 1e-9


def test_relu6d_uniform_boundaries_snap_exactly():
    spec = build_activation("relu6d", 32)
    snap = snap_boundaries(spec, 32)
    assert snap.dx == pytest.approx(6 / 31, rel=1e-12)
    assert snap.max_displacement < 1e-12
    np.testing.assert_allclose(snap.spec.bounds, spec.bounds, atol=1e-12)


def test_single_boundary_uses_level_pitch():
    snap = snap_boundaries(build_activation("tanhd", 2), 16)
    assert snap.dx == 2.0
    assert snap.spec.boundaries == (0.0,)


@given(st.integers(2, 24), st.sampled_from([1, 2, 4, 8]))
def test_snapped_boundaries_are_interior_grid_lines(levels, factor):
    spec = build_activation("tanhd", levels)
    table_len = levels * factor
    snap = snap_boundaries(spec, table_len)
    pos = (snap.spec.bounds - snap.x_origin) / snap.dx
    np.testing.assert_allclose(pos, np.round(pos), atol=1e-6)
    assert np.all(np.diff(np.round(pos)) > 0)
    assert np.round(pos).min() >= 1 and np.round(pos).max() <= table_len - 1
    assert snap.max_displacement == pytest.approx(np.max(np.abs(snap.spec.bounds - spec.bounds)), abs=1e-12)
    if factor >= 2:
        # with one bin per level the outer, wider gaps may force a larger shift
        assert snap.max_displacement <= snap.dx / 2 + 1e-12


def test_more_bins_never_hurt_much():
    spec = build_activation("tanhd", 8)
    coarse = snap_boundaries(spec, 8).max_displacement
    fine = snap_boundaries(spec, 64).max_displacement
    assert fine < coarse


def test_too_few_bins_is_infeasible():
    with pytest.raises(InfeasibleTableError):
        snap_boundaries(build_activation("tanhd", 8), 7)


def test_shared_grid_keeps_each_spec_distinct():
    a, b = build_activation("tanhd", 4), build_activation("tanhd", 8)
    grid = snap_grid([a, b], 64)
    assert len(grid.specs) == 2
    for s in grid.specs:
        assert np.all(np.diff(s.bounds) > 0)


def test_default_table_lengths():
    assert default_table_len(build_activation("tanhd", 32)) == 256
    assert default_table_len(build_activation("relu6d", 32)) == 32
