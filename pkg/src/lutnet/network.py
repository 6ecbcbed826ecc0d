"""Dense float-domain network with quantized forward activations.

Backpropagation follows the straight-through rule: the forward pass emits
quantized levels, the backward pass uses the derivative of the underlying
smooth function at the stored pre-activation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .activations import IDENTITY, ActivationSpec, derivative_underlying, quantize_indices, underlying
from .clustering import WeightCodebook
from .errors import InvalidArgumentError, ShapeError


class Head(str, enum.Enum):
    SOFTMAX_CE = "softmax_ce"
    L2 = "l2"


@dataclass
class Layer:
    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: ActivationSpec = IDENTITY

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Layer):
            return NotImplemented
        return (self.activation == other.activation
                and self.weight.dtype == other.weight.dtype and self.bias.dtype == other.bias.dtype
                and np.array_equal(self.weight, other.weight) and np.array_equal(self.bias, other.bias))

    __hash__ = None

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class DenseNet:
    layers: list[Layer]
    head: Head
    quantize: bool = True
    input_spec: Optional[ActivationSpec] = None
    input_range: tuple[float, float] = (0.0, 1.0)
    codebook: Optional[WeightCodebook] = None

    def __post_init__(self):
        self.head = Head(self.head)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        if self.layers[-1].activation.bounded:
            raise InvalidArgumentError("the output layer must be linear (identity)")

    def __eq__(self, other):
        if not isinstance(other, DenseNet):
            return NotImplemented
        return (self.head == other.head and self.quantize == other.quantize
                and self.input_spec == other.input_spec
                and tuple(self.input_range) == tuple(other.input_range)
                and self.codebook == other.codebook and self.layers == other.layers)

    __hash__ = None

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].in_dim] + [l.out_dim for l in self.layers]

    @property
    def parameter_count(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out.extend((l.weight, l.bias))
        return out

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        pos = 0
        for p in self.parameters():
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def copy(self) -> "DenseNet":
        layers = [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        return DenseNet(layers, self.head, self.quantize, self.input_spec, self.input_range, self.codebook)

    def hidden_specs(self) -> list[ActivationSpec]:
        return [l.activation for l in self.layers[:-1]]


def init_dense_net(dims: Sequence[int], activation: ActivationSpec, head: Head | str, seed: int,
                   quantize: bool = True, input_spec: Optional[ActivationSpec] = None,
                   input_range: tuple[float, float] = (0.0, 1.0),
                   weight_sd: float = 0.005, bias_sd: float = 0.1,
                   dtype=np.float64) -> DenseNet:
    """Gaussian-initialized network; hidden layers share ``activation``, the last is linear."""
    if len(dims) < 2:
        raise InvalidArgumentError("need at least input and output dims")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        act = activation if i < len(dims) - 2 else IDENTITY
        w = rng.normal(0.0, weight_sd, size=(n_in, n_out)).astype(dtype)
        b = rng.normal(0.0, bias_sd, size=n_out).astype(dtype)
        layers.append(Layer(w, b, act))
    return DenseNet(layers, Head(head), quantize, input_spec, input_range)


def input_level_indices(x, spec: ActivationSpec, input_range: tuple[float, float]) -> np.ndarray:
    """Nearest input level index after mapping ``input_range`` affinely onto the level range.

    Exact halfway points go to the higher level. Values outside the range
    saturate at the end levels.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("inputs must be finite")
    lo, hi = input_range
    pos = (x - lo) / (hi - lo) * (spec.levels_count - 1)
    return np.clip(np.floor(pos + 0.5), 0, spec.levels_count - 1).astype(np.int64)


def prepare_inputs(net: DenseNet, x) -> np.ndarray:
    x = np.asarray(x)
    if net.quantize and net.input_spec is not None:
        return net.input_spec.levels[input_level_indices(x, net.input_spec, net.input_range)].astype(
            net.layers[0].weight.dtype)
    return x.astype(net.layers[0].weight.dtype, copy=False)


def activate(net: DenseNet, spec: ActivationSpec, z: np.ndarray) -> np.ndarray:
    if not spec.bounded:
        return z
    if net.quantize:
        return spec.levels[quantize_indices(spec, z)].astype(z.dtype)
    return underlying(spec, z).astype(z.dtype)


@dataclass
class Trace:
    """Per-layer values retained by the forward pass for backpropagation."""

    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    acts: list[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.acts[-1]


def forward_train(net: DenseNet, x, prepared: bool = False) -> Trace:
    """Forward pass keeping pre-activations; ``prepared`` skips input quantization."""
    x = np.asarray(x) if prepared else prepare_inputs(net, x)
    if x.ndim != 2 or x.shape[1] != net.layers[0].in_dim:
        raise ShapeError(f"expected batch of shape (n, {net.layers[0].in_dim}), got {x.shape}")
    trace = Trace(inputs=x)
    a = x
    for layer in net.layers:
        z = a @ layer.weight + layer.bias
        a = activate(net, layer.activation, z)
        trace.pre.append(z)
        trace.acts.append(a)
    return trace


def predict(net: DenseNet, x) -> np.ndarray:
    return forward_train(net, x).output


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def loss_and_output_grad(head: Head, out: np.ndarray, targets) -> tuple[float, np.ndarray]:
    n = out.shape[0]
    if head is Head.SOFTMAX_CE:
        targets = np.asarray(targets, dtype=np.int64)
        p = softmax(out)
        rows = np.arange(n)
        loss = float(-np.mean(np.log(np.maximum(p[rows, targets], 1e-300))))
        g = p
        g[rows, targets] -= 1.0
        return loss, g / n
    targets = np.asarray(targets, dtype=out.dtype).reshape(out.shape)
    diff = out - targets
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def backward(net: DenseNet, trace: Trace, targets, out_grad: Optional[np.ndarray] = None):
    """Return ``(loss, [(dW, db), ...])`` for the batch recorded in ``trace``.

    When ``out_grad`` is given it replaces the head's loss gradient (the
    returned loss is then meaningless).
    """
    if out_grad is None:
        loss, delta = loss_and_output_grad(net.head, trace.output, targets)
    else:
        loss, delta = float("nan"), np.asarray(out_grad, dtype=trace.output.dtype)
        if delta.shape != trace.output.shape:
            raise ShapeError("output gradient shape mismatch")
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a_prev = trace.acts[i - 1] if i > 0 else trace.inputs
        grads[i] = (a_prev.T @ delta, delta.sum(axis=0))
        if i > 0:
            prev_spec = net.layers[i - 1].activation
            delta = (delta @ layer.weight.T) * derivative_underlying(prev_spec, trace.pre[i - 1]).astype(delta.dtype)
    return loss, grads
