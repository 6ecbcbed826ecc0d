"""Command-line entry point: ``lutnet {train,compile,infer,eval,inspect,conformance}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 failed invariant.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .activations import build_activation
from .clustering import Method, assign_to_codebook
from .compiler import CompileOptions, LutHead, LutModel, compile_model, decompile
from .data import Dataset, gen_parabola, gen_patches, find_mnist, load_mnist, parabola_grid
from .entropy import empirical_entropy
from .errors import (CompileError, ConfigurationError, DegenerateClusteringError, FormatError,
                     InfeasibleTableError, InvalidArgumentError, LutNetError, NonFiniteLossError, OverflowBoundError)
from .inference import forward_int, quantize_input, reference_forward
from .network import DenseNet, Head, init_dense_net, predict
from .serialization import estimate_storage, load_model, save_model
from .training import Metrics, TrainConfig, evaluate, train_loop

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4

log = logging.getLogger("lutnet")


@dataclass(frozen=True)
class TaskDefaults:
    hidden: str
    head: Head
    n_train: Optional[int]
    input_range: tuple[float, float]
    input_levels: Optional[int] = None  # None: same as the hidden activation
    weight_sd: float = 0.005
    lr: float = 1e-3


TASKS = {
    "mnist": TaskDefaults("100,100", Head.SOFTMAX_CE, None, (0.0, 1.0)),
    # one real input with an even target: tiny initial weights sit on a
    # symmetric saddle, so this task starts from unit-scale weights
    "parabola": TaskDefaults("2", Head.L2, 10_000, (-1.0, 1.0), input_levels=1024, weight_sd=1.0, lr=1e-2),
    "autoenc": TaskDefaults("32,16,32", Head.L2, 50_000, (0.0, 1.0)),
}


class UsageError(Exception):
    pass


class InvariantFailure(Exception):
    pass


# --------------------------------------------------------------------------
# task data
# --------------------------------------------------------------------------


def load_task(args) -> tuple[Dataset, Dataset]:
    """(train, eval) splits for ``args.task``."""
    if args.task == "mnist":
        if find_mnist(args.mnist_dir) is None:
            raise FileNotFoundError("MNIST IDX files not found; pass --mnist-dir or set MNIST_DIR "
                                    "(scripts/fetch_mnist.sh downloads them)")
        return load_mnist(args.mnist_dir)
    n = args.n_train or TASKS[args.task].n_train
    if args.task == "parabola":
        return gen_parabola(n, args.seed), parabola_grid(1001)
    source = args.patch_source
    if source is None:
        paths = find_mnist(args.mnist_dir)
        if paths is None:
            raise FileNotFoundError("autoenc needs --patch-source or MNIST files for patches")
        source = paths["train_images"]
    data = gen_patches(source, n + n // 5, args.seed)
    return data.split(n)


def parse_hidden(text: str) -> list[int]:
    try:
        sizes = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--hidden takes comma-separated sizes, got {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise UsageError("--hidden needs at least one positive layer size")
    return sizes


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_train(args) -> int:
    if args.cluster_method == "laplacian" and args.weights % 2 == 0:
        raise UsageError("--cluster-method laplacian needs an odd --weights")
    task = TASKS[args.task]
    hidden = parse_hidden(args.hidden or task.hidden)
    train, test = load_task(args)
    head = task.head
    act = build_activation(args.activation, args.levels)
    input_spec = build_activation(args.activation, args.input_levels or task.input_levels or args.levels)
    n_out = 10 if args.task == "mnist" else train.y.shape[1]
    dims = [train.x.shape[1]] + hidden + [n_out]
    net = init_dense_net(dims, act, head, seed=args.seed, quantize=not args.float,
                         input_spec=input_spec, input_range=task.input_range,
                         weight_sd=args.weight_sd or task.weight_sd, dtype=np.float32)
    config = TrainConfig(optimizer=args.optimizer, lr=args.lr or task.lr, batch_size=args.batch_size,
                         total_steps=args.steps, cluster_every=args.cluster_every,
                         cluster_method=args.cluster_method if args.weights else None,
                         num_weights=args.weights or 1000, subsample_fraction=args.subsample,
                         eval_every=args.eval_every, seed=args.seed)
    rows: list[Metrics] = []
    result = train_loop(net, train.x.astype(np.float32), train.y, config,
                        eval_data=(test.x, test.y), on_metrics=rows.append)
    out = Path(args.out)
    save_model(result.net, out, encoding=args.encoding)
    metrics_path = Path(args.metrics) if args.metrics else out.with_suffix(".csv")
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(Metrics.FIELDS)
        for m in rows:
            writer.writerow(m.as_row())
    final = rows[-1].eval_metric if rows else evaluate(net, test.x, test.y)
    name = "accuracy" if head is Head.SOFTMAX_CE else "l2"
    print(f"{name} {final:.6f}")
    print(f"wrote {out} and {metrics_path}")
    return EXIT_OK


def cmd_compile(args) -> int:
    net = _load_checkpoint(args.model)
    options = CompileOptions(table_len=args.table_len, acc_bits=args.acc_bits, guard_bits=args.guard_bits)
    lut = compile_model(net, options=options)
    size = save_model(lut, args.out, encoding=args.encoding)
    print(f"compiled: shift {lut.shift}, dx {lut.dx:.6g}, table {lut.mult_table.shape[0]}x"
          f"{lut.mult_table.shape[1]}, {size} bytes -> {args.out}")
    return EXIT_OK


def _load_checkpoint(path) -> DenseNet:
    model = load_model(path)
    if not isinstance(model, DenseNet):
        raise UsageError(f"{path} is a compiled model; this command needs a training checkpoint")
    return model


def _eval_inputs(args) -> Dataset:
    if args.input:
        x = np.load(args.input)
        return Dataset(x, np.full(len(x), -1))
    _, test = load_task(args)
    return test if args.limit is None else Dataset(test.x[:args.limit], test.y[:args.limit])


def _run(model, x) -> np.ndarray:
    """Predictions: classes for classifiers, real outputs for regressors."""
    if isinstance(model, LutModel):
        out = forward_int(model, quantize_input(x, model.input_spec, model.input_range))
        if model.head is LutHead.REGRESSION:
            shift, dx = model.output_scale
            return out.astype(np.float64) * (dx / float(1 << shift))
        return out
    out = predict(model, x)
    return np.argmax(out, axis=1) if model.head is Head.SOFTMAX_CE else out


def cmd_infer(args) -> int:
    model = load_model(args.model)
    data = _eval_inputs(args)
    pred = _run(model, data.x)
    stream = open(args.out, "w") if args.out else sys.stdout
    try:
        for i, p in enumerate(pred):
            value = int(p) if np.ndim(p) == 0 else [float(v) for v in np.ravel(p)]
            stream.write(json.dumps({"index": i, "prediction": value}) + "\n")
    finally:
        if stream is not sys.stdout:
            stream.close()
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    data = _eval_inputs(args)
    pred = _run(model, data.x)
    if pred.ndim == 1:
        print(f"accuracy {np.mean(pred == data.y):.6f}")
    else:
        target = np.asarray(data.y, dtype=np.float64).reshape(pred.shape)
        print(f"l2 {np.mean(np.sum((pred - target) ** 2, axis=1)):.6g}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    model = load_model(args.model)
    report: dict = {"kind": type(model).__name__, "parameters": model.parameter_count}
    if isinstance(model, LutModel):
        idx = np.concatenate([np.concatenate([l.weight_index.ravel(), l.bias_index]) for l in model.layers])
        centers = model.centers
        report.update(shift=model.shift, dx=model.dx, table_len=model.table_len,
                      table_shape=list(model.mult_table.shape),
                      dims=[model.layers[0].fan_in] + [l.out_dim for l in model.layers])
    else:
        report["dims"] = model.dims
        cb = model.codebook
        centers = cb.centers if cb is not None else None
        idx = assign_to_codebook(model.flat_parameters(), cb) if cb is not None else None
        report["distinct_weights"] = int(np.unique(model.flat_parameters()).size)
    if centers is not None:
        occupancy = np.bincount(idx, minlength=centers.size)
        report["codebook"] = {"size": int(centers.size), "min": float(centers.min()),
                              "max": float(centers.max()), "used": int(np.count_nonzero(occupancy)),
                              "entropy_bits": empirical_entropy(idx)}
        if args.occupancy:
            report["occupancy"] = occupancy.tolist()
            report["centers"] = centers.tolist()
    report["storage"] = {enc: estimate_storage(model, enc).as_dict() for enc in ("raw", "huffman")}
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_conformance(args) -> int:
    model = load_model(args.model)
    if isinstance(model, DenseNet):
        model = compile_model(model, options=CompileOptions(acc_bits=args.acc_bits, guard_bits=args.guard_bits))
    data = _eval_inputs(args)
    rng = np.random.default_rng(args.seed)
    n = min(args.samples, len(data.x))
    pick = np.sort(rng.choice(len(data.x), size=n, replace=False))
    idx = quantize_input(data.x[pick], model.input_spec, model.input_range)
    got, int_trace = forward_int(model, idx, trace=True, check_overflow=True)
    want, ref_trace = reference_forward(decompile(model), idx, trace=True)
    agree = np.concatenate([(a == b).ravel() for a, b in zip(int_trace.level_indices, ref_trace.level_indices)]) \
        if int_trace.level_indices else np.ones(1, dtype=bool)
    dev = max((int(np.abs(a - b).max()) for a, b in zip(int_trace.level_indices, ref_trace.level_indices)),
              default=0)
    report = {"samples": n, "unit_agreement": float(agree.mean()), "max_index_deviation": dev}
    if model.head is LutHead.ARGMAX:
        report["argmax_agreement"] = float(np.mean(got == want))
    else:
        shift, dx = model.output_scale
        err = np.abs(got.astype(np.float64) * (dx / float(1 << shift)) - want)
        report["max_output_error"] = float(err.max())
    print(json.dumps(report, indent=2))
    ok = (report["unit_agreement"] >= args.min_unit and dev <= 1
          and report.get("argmax_agreement", 1.0) >= args.min_argmax)
    if not ok:
        raise InvariantFailure("conformance below thresholds")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=sorted(TASKS), default="mnist")
    p.add_argument("--mnist-dir", default=None, help="directory with the MNIST IDX files (default $MNIST_DIR)")
    p.add_argument("--patch-source", default=None, help="image directory or IDX file for autoenc patches")
    p.add_argument("--n-train", type=int, default=None, help="synthetic training set size")
    p.add_argument("--seed", type=int, default=0)


def _eval_flags(p: argparse.ArgumentParser) -> None:
    _data_flags(p)
    p.add_argument("model")
    p.add_argument("--input", default=None, help=".npy array of raw inputs instead of the task test set")
    p.add_argument("--limit", type=int, default=None)


def _compile_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--acc-bits", type=int, choices=(32, 64), default=64)
    p.add_argument("--guard-bits", type=int, default=8)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lutnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write a checkpoint plus metrics CSV")
    _data_flags(p)
    p.add_argument("--activation", choices=("tanhd", "relu6d"), default="tanhd")
    p.add_argument("--levels", type=int, default=32)
    p.add_argument("--input-levels", type=int, default=None)
    p.add_argument("--hidden", default=None, help="comma-separated hidden sizes, e.g. 100,100")
    p.add_argument("--float", action="store_true", help="continuous activations (baseline)")
    p.add_argument("--weights", type=int, default=0, help="codebook size |W|; 0 disables clustering")
    p.add_argument("--cluster-method", choices=[m.value for m in Method], default="kmeans")
    p.add_argument("--cluster-every", type=int, default=1000)
    p.add_argument("--subsample", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--lr", type=float, default=None, help="learning rate (task default)")
    p.add_argument("--weight-sd", type=float, default=None, help="init weight sd (task default)")
    p.add_argument("--optimizer", choices=("sgd", "momentum", "adam"), default="adam")
    p.add_argument("--eval-every", type=int, default=1000)
    p.add_argument("--encoding", choices=("raw", "huffman"), default="raw")
    p.add_argument("--out", default="model.qfge")
    p.add_argument("--metrics", default=None, help="metrics CSV path (default: next to --out)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compile", help="compile a snapped checkpoint into a lookup-table model")
    p.add_argument("model")
    _compile_flags(p)
    p.add_argument("--table-len", type=int, default=None)
    p.add_argument("--encoding", choices=("raw", "huffman"), default="raw")
    p.add_argument("--out", default="model.lut")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("infer", help="write JSON-lines predictions")
    _eval_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="print accuracy or mean squared L2 error")
    _eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="dump codebook, occupancy and storage report")
    p.add_argument("model")
    p.add_argument("--occupancy", action="store_true", help="include per-center counts")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("conformance", help="compare the integer engine against the reference")
    _eval_flags(p)
    _compile_flags(p)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--min-unit", type=float, default=0.9999)
    p.add_argument("--min-argmax", type=float, default=0.999)
    p.set_defaults(func=cmd_conformance)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidArgumentError, DegenerateClusteringError) as exc:
        parser.print_usage(sys.stderr)
        print(f"lutnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"lutnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantFailure, CompileError, ConfigurationError, InfeasibleTableError,
            OverflowBoundError, NonFiniteLossError, LutNetError, AssertionError) as exc:
        print(f"lutnet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
