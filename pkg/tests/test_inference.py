import numpy as np
import pytest
from hypothesis import given, strategies as st

from lutnet.activations import build_activation
from lutnet.clustering import Method, WeightCodebook
from lutnet.compiler import CompileOptions, compile_model, decompile
from lutnet.inference import forward_int, quantize_input, reference_forward
from lutnet.inference.audit import audit_source
from lutnet.network import init_dense_net
from lutnet.training import snap_network


def random_lut(seed, kind="tanhd", levels=8, dims=(10, 12, 9, 4), head="softmax_ce", k=31, acc_bits=64):
    rng = np.random.default_rng(seed)
    spec = build_activation(kind, levels)
    net = init_dense_net(list(dims), spec, head, seed=seed, input_spec=spec, weight_sd=0.5, bias_sd=0.3)
    centers = np.unique(rng.normal(scale=0.5, size=k))
    snap_network(net, WeightCodebook(centers, Method.KMEANS))
    return compile_model(net, options=CompileOptions(acc_bits=acc_bits))


def test_engine_source_has_no_multiplication_or_floats():
    assert audit_source() == []


def test_audit_catches_offences(tmp_path):
    bad = tmp_path / "bad.py"
    bad.write_text("import numpy as np\ndef f(a, b):\n    c = a * b\n    c //= 2\n    return np.dot(a, 0.5), float(c)\n")
    found = audit_source(bad)
    assert len(found) == 5 and any("Mult" in f for f in found) and any(".dot" in f for f in found)


def test_engine_rejects_float_inputs():
    lut = random_lut(0)
    with pytest.raises(TypeError):
        forward_int(lut, np.zeros((1, 10)))
    with pytest.raises(ValueError):
        forward_int(lut, np.zeros((1, 3), dtype=np.int64))


@given(st.integers(0, 10_000), st.sampled_from(["tanhd", "relu6d"]), st.sampled_from([4, 8, 32]))
def test_integer_engine_agrees_with_reference(seed, kind, levels):
    lut = random_lut(seed, kind, levels)
    idx = np.random.default_rng(seed).integers(0, levels, size=(64, 10))
    got, it = forward_int(lut, idx, trace=True, check_overflow=True)
    want, rt = reference_forward(decompile(lut), idx, trace=True)
    assert got.dtype.kind == "i"
    for a, b in zip(it.level_indices, rt.level_indices):
        assert np.abs(a - b).max() <= 1
        assert np.mean(a == b) >= 0.99
    assert np.mean(got == want) >= 0.95


def test_integer_sums_track_real_pre_activations():
    lut = random_lut(3, head="l2")
    idx = np.random.default_rng(3).integers(0, 8, size=(50, 10))
    _, it = forward_int(lut, idx, trace=True)
    _, rt = reference_forward(decompile(lut), idx, trace=True)
    unit = lut.dx / 2 ** lut.shift
    for layer, s, z in zip(lut.layers, it.sums, rt.pre_activations):
        # one half-unit of rounding per table entry (inputs plus bias)
        assert np.max(np.abs(s * unit - z)) <= (layer.fan_in + 1) * unit / 2 + 1e-12


def test_regression_head_returns_scaled_integers():
    lut = random_lut(4, head="l2")
    idx = np.random.default_rng(4).integers(0, 8, size=(20, 10))
    out = forward_int(lut, idx)
    ref = reference_forward(decompile(lut), idx)
    shift, dx = lut.output_scale
    assert out.dtype == np.int64
    np.testing.assert_allclose(out * (dx / 2 ** shift), ref, atol=1e-9)


def test_narrow_accumulator():
    lut = random_lut(5, dims=(10, 6, 3), acc_bits=32)
    assert int(np.abs(lut.mult_table).max()) * 11 < 2 ** 31
    idx = np.random.default_rng(5).integers(0, 8, size=(30, 10))
    assert np.array_equal(forward_int(lut, idx, check_overflow=True), reference_forward(decompile(lut), idx))


def test_single_sample_and_batch_agree():
    lut = random_lut(6)
    idx = np.random.default_rng(6).integers(0, 8, size=(5, 10))
    batch = forward_int(lut, idx)
    assert [int(forward_int(lut, row)[0]) for row in idx] == batch.tolist()


def test_quantize_input_rounds_to_nearest_level():
    spec = build_activation("tanhd", 5)
    assert quantize_input([0.0, 0.12, 0.13, 0.5, 1.0, 2.0], spec).tolist() == [0, 0, 1, 2, 4, 4]
