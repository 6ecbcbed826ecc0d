"""Float reference semantics for compiled models, used as the conformance oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..activations import ActivationSpec
from ..network import DenseNet, Head, input_level_indices


def quantize_input(raw, input_spec: ActivationSpec, input_range: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """Map raw inputs in ``input_range`` to the nearest input level index (ties go up)."""
    return input_level_indices(raw, input_spec, input_range)


@dataclass
class ReferenceTrace:
    level_indices: list = field(default_factory=list)
    pre_activations: list = field(default_factory=list)


def reference_forward(net: DenseNet, input_indices, trace: bool = False):
    """Exact-sum forward pass binning pre-activations against ``net``'s (snapped) boundaries.

    ``net`` is typically ``decompile(lut)``. Returns argmax classes or real
    outputs, plus a trace of per-layer level indices when requested.
    """
    idx = np.asarray(input_indices, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx[None, :]
    a = net.input_spec.levels[idx]
    record = ReferenceTrace()
    z = a
    for layer in net.layers:
        z = a @ layer.weight.astype(np.float64) + layer.bias.astype(np.float64)
        if not layer.activation.bounded:
            break
        level = np.searchsorted(layer.activation.bounds, z, side="right")
        a = layer.activation.levels[level]
        if trace:
            record.level_indices.append(level)
            record.pre_activations.append(z)
    out = np.argmax(z, axis=1) if net.head is Head.SOFTMAX_CE else z
    return (out, record) if trace else out
