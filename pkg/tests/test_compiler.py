import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from lutnet.activations import build_activation
from lutnet.clustering import Method, WeightCodebook
from lutnet.compiler import (CompileOptions, build_activation_index_table, build_mult_table, choose_scale,
                             compile_model, decompile, index_bits, precision_floor, round_half_away,
                             scaled_entry)
from lutnet.errors import CompileError, ConfigurationError, InvalidArgumentError
from lutnet.network import init_dense_net
from lutnet.training import snap_network


def snapped_net(dims=(6, 5, 4, 3), levels=8, kind="tanhd", k=15, seed=0, head="softmax_ce"):
    spec = build_activation(kind, levels)
    net = init_dense_net(list(dims), spec, head, seed=seed, input_spec=spec, weight_sd=0.6, bias_sd=0.3)
    centers = np.unique(np.random.default_rng(seed).normal(scale=0.6, size=k))
    snap_network(net, WeightCodebook(centers, Method.KMEANS))
    return net


def test_round_half_away_from_zero():
    assert [round_half_away(Fraction(v)) for v in (2.5, -2.5, 0.5, -0.5, 1.4, -1.6)] == [3, -3, 1, -1, 1, -2]


@given(st.floats(-1, 1), st.floats(-2, 2), st.integers(0, 40), st.floats(0.01, 1))
def test_scaled_entry_matches_high_precision(level, center, shift, dx):
    mpmath.mp.prec = 400
    exact = mpmath.mpf(level) * mpmath.mpf(center) * mpmath.mpf(2) ** shift / mpmath.mpf(dx)
    want = int(mpmath.sign(exact) * mpmath.floor(abs(exact) + mpmath.mpf(0.5)))
    assert scaled_entry(level, center, shift, dx) == want


def test_precision_floor_for_mnist_fan_in():
    assert precision_floor(784, 8) == 18


def test_choose_scale_is_largest_safe_shift():
    dx, w = 0.0162, 0.5
    s = choose_scale(784, 1.0, w, dx, acc_bits=64, guard_bits=8)
    assert s >= 18

    def total(shift):
        return 785 * abs(scaled_entry(1.0, w, shift, dx))

    assert total(s) < 2 ** 63 <= total(s + 1)


def test_choose_scale_reports_infeasible_accumulator():
    with pytest.raises(ConfigurationError):
        choose_scale(784, 1.0, 0.5, 0.0162, acc_bits=32, guard_bits=8)
    with pytest.raises(InvalidArgumentError):
        choose_scale(10, 1.0, 0.5, 0.1, acc_bits=16)


def test_mult_table_layout():
    centers, rows = [-0.5, 0.25], [-1.0, 0.0, 1.0]
    table = build_mult_table(centers, rows, shift=4, dx=0.5)
    assert table.shape == (4, 2)
    assert table[:, 0].tolist() == [16, 0, -16, -16]
    assert table[-1].tolist() == [-16, 8]  # bias row multiplies by 1.0


def test_activation_index_table_matches_bin_centres():
    spec = build_activation("tanhd", 6)
    from lutnet.activations import snap_boundaries
    snap = snap_boundaries(spec, 48)
    table = build_activation_index_table(snap.spec, snap.dx, snap.x_origin, 48)
    centres = snap.x_origin + (np.arange(48) + 0.5) * snap.dx
    assert np.array_equal(table, np.searchsorted(snap.spec.bounds, centres, side="right"))
    assert table[0] == 0 and table[-1] == 5


def test_compile_requires_snapped_parameters():
    net = snapped_net()
    net.codebook = None
    with pytest.raises(CompileError):
        compile_model(net)
    net = snapped_net()
    net.layers[0].weight[0, 0] += 1e-3
    with pytest.raises(CompileError) as err:
        compile_model(net)
    assert err.value.offenders[0][:3] == (0, "weight", 0)


def test_compiled_model_shapes_and_round_trip():
    net = snapped_net()
    lut = compile_model(net, options=CompileOptions(guard_bits=8))
    assert lut.mult_table.shape == (8 + 1, net.codebook.size)
    assert [l.fan_in for l in lut.layers] == [6, 5, 4]
    assert lut.layers[-1].act_table is None
    back = decompile(lut)
    for a, b in zip(back.layers, net.layers):
        assert np.array_equal(a.weight, b.weight.astype(np.float64))
    assert lut.parameter_count == net.parameter_count


def test_relu_network_compiles_with_exact_grid():
    net = snapped_net(kind="relu6d", levels=16)
    lut = compile_model(net)
    assert lut.dx == pytest.approx(6 / 15)
    assert lut.meta["max_displacement"] < 1e-12


def test_index_bits():
    assert [index_bits(n) for n in (2, 100, 1000, 1024, 1025)] == [1, 7, 10, 10, 11]
