import csv
import json

import numpy as np
import pytest

from lutnet.cli import EXIT_DATA, EXIT_INVARIANT, EXIT_OK, EXIT_USAGE, main


def train(tmp_path, name, *extra):
    out = tmp_path / f"{name}.qfge"
    argv = ["train", "--task", "parabola", "--steps", "300", "--eval-every", "100",
            "--levels", "32", "--out", str(out), *extra]
    return main(argv), out


@pytest.fixture(scope="module")
def snapped(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    code, out = train(tmp, "snapped", "--weights", "5", "--cluster-every", "100", "--n-train", "2000")
    assert code == EXIT_OK
    return out


def test_train_writes_metrics_csv(snapped):
    with open(snapped.with_suffix(".csv")) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "train_loss", "eval_metric", "distinct_weights", "w_max"]
    assert [int(r[0]) for r in rows[1:]] == [100, 200, 300]
    assert int(rows[-1][3]) <= 5


def test_compile_eval_infer_inspect_conformance(snapped, tmp_path, capsys):
    lut = tmp_path / "m.lut"
    assert main(["compile", str(snapped), "--out", str(lut)]) == EXIT_OK
    assert main(["eval", str(lut), "--task", "parabola"]) == EXIT_OK
    assert capsys.readouterr().out.split()[-2] == "l2"
    preds = tmp_path / "p.jsonl"
    assert main(["infer", str(lut), "--task", "parabola", "--limit", "5", "--out", str(preds)]) == EXIT_OK
    lines = [json.loads(l) for l in preds.read_text().splitlines()]
    assert [l["index"] for l in lines] == list(range(5)) and len(lines[0]["prediction"]) == 1
    assert main(["inspect", str(lut)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["kind"] == "LutModel" and report["codebook"]["size"] == 5
    assert main(["conformance", str(lut), "--task", "parabola", "--samples", "500"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["unit_agreement"] >= 0.9999


def test_unsnapped_checkpoint_fails_compile(tmp_path):
    code, out = train(tmp_path, "free", "--n-train", "500", "--steps", "50")
    assert code == EXIT_OK
    assert main(["compile", str(out), "--out", str(tmp_path / "x.lut")]) == EXIT_INVARIANT


def test_usage_and_data_errors(tmp_path, snapped):
    code, _ = train(tmp_path, "bad", "--weights", "4", "--cluster-method", "laplacian")
    assert code == EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        main(["train", "--activation", "sigmoid"])
    assert err.value.code == EXIT_USAGE
    assert main(["inspect", str(tmp_path / "missing.qfge")]) == EXIT_DATA
    junk = tmp_path / "junk.qfge"
    junk.write_bytes(b"not a model at all")
    assert main(["inspect", str(junk)]) == EXIT_DATA
    corrupt = tmp_path / "corrupt.qfge"
    data = bytearray(snapped.read_bytes())
    data[40] ^= 0xFF
    corrupt.write_bytes(bytes(data))
    assert main(["inspect", str(corrupt)]) == EXIT_DATA


def test_fixed_seed_is_bit_reproducible(tmp_path):
    _, a = train(tmp_path, "a", "--n-train", "500", "--steps", "100", "--seed", "3")
    _, b = train(tmp_path, "b", "--n-train", "500", "--steps", "100", "--seed", "3")
    assert a.read_bytes() == b.read_bytes()
    _, c = train(tmp_path, "c", "--n-train", "500", "--steps", "100", "--seed", "4")
    assert a.read_bytes() != c.read_bytes()


def test_missing_mnist_is_a_data_error(tmp_path, monkeypatch):
    monkeypatch.delenv("MNIST_DIR", raising=False)
    code = main(["train", "--task", "mnist", "--mnist-dir", str(tmp_path), "--steps", "1",
                 "--out", str(tmp_path / "m.qfge")])
    assert code == EXIT_DATA


def test_infer_from_npy(snapped, tmp_path, capsys):
    x = tmp_path / "x.npy"
    np.save(x, np.array([[0.0], [0.5], [-1.0]]))
    assert main(["infer", str(snapped), "--input", str(x)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
