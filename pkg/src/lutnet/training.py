"""Optimizers, the periodic clustering schedule, the training loop and evaluation."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .clustering import Method, WeightCodebook, assign_to_codebook, fit_codebook, round_codebook, subsample
from .errors import InvalidArgumentError, NonFiniteLossError
from .network import DenseNet, Head, backward, forward_train, predict, prepare_inputs

log = logging.getLogger(__name__)


class Optimizer(str, enum.Enum):
    SGD = "sgd"
    SGD_MOMENTUM = "momentum"
    ADAM = "adam"


@dataclass
class TrainConfig:
    optimizer: Optimizer = Optimizer.ADAM
    lr: float = 1e-3
    lr_decay_every: int = 0  # 0 keeps the rate constant
    lr_decay_factor: float = 0.5
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 100
    total_steps: int = 1000
    cluster_every: int = 1000
    cluster_method: Optional[Method] = None  # None trains with free-valued weights
    num_weights: int = 1000
    subsample_fraction: float = 1.0
    kmeans_iters: int = 100
    terminal_snap: bool = True
    eval_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.optimizer = Optimizer(self.optimizer)
        if self.cluster_method is not None:
            self.cluster_method = Method(self.cluster_method)
            if self.cluster_method is Method.LAPLACIAN and self.num_weights % 2 == 0:
                raise InvalidArgumentError("the Laplacian codebook needs an odd number of weights")
        if self.cluster_every < 1:
            raise InvalidArgumentError("cluster_every must be >= 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise InvalidArgumentError("subsample_fraction must lie in (0, 1]")
        if self.batch_size < 1 or self.total_steps < 0:
            raise InvalidArgumentError("batch_size >= 1 and total_steps >= 0 required")

    def lr_at(self, step: int) -> float:
        if self.lr_decay_every <= 0:
            return self.lr
        return self.lr * self.lr_decay_factor ** (step // self.lr_decay_every)


class OptimizerState:
    """Per-parameter moment buffers; survives clustering steps untouched."""

    def __init__(self, net: DenseNet, config: TrainConfig):
        self.config = config
        self.t = 0
        params = net.parameters()
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params] if config.optimizer is Optimizer.ADAM else None


def optimizer_step(state: OptimizerState, net: DenseNet, grads, lr: Optional[float] = None) -> DenseNet:
    """Apply one update in place; ``grads`` is the per-layer ``(dW, db)`` list."""
    cfg = state.config
    lr = cfg.lr if lr is None else lr
    flat_grads = [g for pair in grads for g in pair]
    state.t += 1
    for i, (p, g) in enumerate(zip(net.parameters(), flat_grads)):
        if cfg.optimizer is Optimizer.SGD:
            p -= lr * g
        elif cfg.optimizer is Optimizer.SGD_MOMENTUM:
            m = state.m[i]
            m *= cfg.momentum
            m += g
            p -= lr * m
        else:
            m, v = state.m[i], state.v[i]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / (1.0 - cfg.beta1 ** state.t)
            v_hat = v / (1.0 - cfg.beta2 ** state.t)
            p -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return net


def cluster_network(net: DenseNet, config: TrainConfig, prev: Optional[WeightCodebook] = None,
                    seed: int = 0) -> WeightCodebook:
    """Fit one codebook over every weight and bias in the network and snap them all to it."""
    pool = net.flat_parameters().astype(np.float64)
    sample = pool if config.subsample_fraction >= 1.0 else subsample(pool, config.subsample_fraction, seed)
    codebook = fit_codebook(sample, config.cluster_method, config.num_weights, prev,
                            max_iters=config.kmeans_iters)
    codebook = round_codebook(codebook, net.layers[0].weight.dtype)
    snap_network(net, codebook)
    return codebook


def snap_network(net: DenseNet, codebook: WeightCodebook) -> None:
    for p in net.parameters():
        p[...] = codebook.centers[assign_to_codebook(p, codebook)].reshape(p.shape)
    net.codebook = codebook


def apply_clustering_schedule(net: DenseNet, step: int, config: TrainConfig,
                              prev: Optional[WeightCodebook] = None) -> Optional[WeightCodebook]:
    """Cluster when ``step`` (1-based count of completed updates) hits the period.

    Returns the new codebook, or ``None`` when this step is not a clustering step.
    """
    if config.cluster_method is None or step <= 0 or step % config.cluster_every:
        return None
    return cluster_network(net, config, prev, seed=config.seed + step)


def distinct_count(net: DenseNet) -> int:
    return int(np.unique(net.flat_parameters()).size)


def is_snapped(net: DenseNet, codebook: Optional[WeightCodebook] = None) -> bool:
    codebook = codebook or net.codebook
    if codebook is None:
        return False
    flat = net.flat_parameters().astype(np.float64)
    return bool(np.all(codebook.centers[assign_to_codebook(flat, codebook)] == flat))


@dataclass
class Metrics:
    step: int
    train_loss: float
    eval_metric: float
    distinct_weights: int
    w_max: float

    FIELDS = ("step", "train_loss", "eval_metric", "distinct_weights", "w_max")

    def as_row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


@dataclass
class TrainResult:
    net: DenseNet
    codebook: Optional[WeightCodebook]
    history: list[Metrics] = field(default_factory=list)
    loss_spikes: list[int] = field(default_factory=list)
    w_max_trace: list[tuple[int, float]] = field(default_factory=list)  # Laplacian only


def evaluate(net: DenseNet, x, y, head: Optional[Head] = None, batch: int = 2000) -> float:
    """Accuracy for classifiers, mean per-sample squared L2 error for regressors."""
    head = Head(head or net.head)
    x = np.asarray(x)
    correct, total_err = 0, 0.0
    for i in range(0, len(x), batch):
        out = predict(net, x[i:i + batch])
        if head is Head.SOFTMAX_CE:
            correct += int(np.sum(np.argmax(out, axis=1) == np.asarray(y[i:i + batch])))
        else:
            t = np.asarray(y[i:i + batch], dtype=np.float64).reshape(out.shape)
            total_err += float(np.sum((out.astype(np.float64) - t) ** 2))
    return correct / len(x) if head is Head.SOFTMAX_CE else total_err / len(x)


def accuracy_from_outputs(out: np.ndarray, y) -> float:
    return float(np.mean(np.argmax(out, axis=1) == np.asarray(y)))


def train_loop(net: DenseNet, x_train, y_train, config: TrainConfig,
               eval_data: Optional[tuple] = None,
               on_metrics: Optional[Callable[[Metrics], None]] = None) -> TrainResult:
    """Minibatch training with the periodic clustering step and a terminal snap."""
    x_train = prepare_inputs(net, x_train)
    y_train = np.asarray(y_train)
    n = len(x_train)
    rng = np.random.default_rng(config.seed)
    state = OptimizerState(net, config)
    result = TrainResult(net, None)
    order = rng.permutation(n)
    pos = 0
    running, running_n = 0.0, 0
    prev_loss = math.inf
    last_cluster_step = 0
    for step in range(1, config.total_steps + 1):
        if pos + config.batch_size > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + config.batch_size]
        pos += config.batch_size
        trace = forward_train(net, x_train[idx], prepared=True)
        loss, grads = backward(net, trace, y_train[idx])
        if not math.isfinite(loss):
            norms = [float(np.abs(l.weight).max()) for l in net.layers]
            raise NonFiniteLossError(f"non-finite loss {loss} at step {step}; max |W| per layer {norms}")
        if loss > 4.0 * prev_loss and step > 10:
            result.loss_spikes.append(step)
        prev_loss = loss
        running += loss
        running_n += 1
        optimizer_step(state, net, grads, config.lr_at(step - 1))
        if not all(np.isfinite(p).all() for p in net.parameters()):
            raise NonFiniteLossError(f"parameters became non-finite at step {step}")
        cb = apply_clustering_schedule(net, step, config, result.codebook)
        if cb is not None:
            result.codebook = cb
            last_cluster_step = step
            if cb.method is Method.LAPLACIAN:
                result.w_max_trace.append((step, float(np.max(np.abs(cb.centers - cb.mean_a)))))
        if config.eval_every and (step % config.eval_every == 0 or step == config.total_steps):
            metric = evaluate(net, *eval_data) if eval_data is not None else float("nan")
            m = Metrics(step, running / max(running_n, 1), metric, distinct_count(net),
                        float(np.max(np.abs(net.flat_parameters()))))
            result.history.append(m)
            running, running_n = 0.0, 0
            log.info("step %d loss %.5f eval %.5f distinct %d", m.step, m.train_loss, m.eval_metric,
                     m.distinct_weights)
            if on_metrics:
                on_metrics(m)
    if config.cluster_method is not None and config.terminal_snap and last_cluster_step != config.total_steps:
        result.codebook = cluster_network(net, config, result.codebook, seed=config.seed + config.total_steps + 1)
    net.codebook = result.codebook
    return result
