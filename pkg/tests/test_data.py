import gzip
import hashlib

import numpy as np
import pytest

from lutnet.data import gen_parabola, gen_patches, load_mnist, load_mnist_idx, parabola_grid, write_idx
from lutnet.errors import IdxFormatError


@pytest.fixture
def tiny_idx(tmp_path):
    images = np.arange(3 * 4 * 5, dtype=np.uint8).reshape(3, 4, 5)
    images[0, 0, 0] = 255
    labels = np.array([7, 0, 9], dtype=np.uint8)
    write_idx(tmp_path / "img", images)
    write_idx(tmp_path / "lbl", labels)
    return tmp_path / "img", tmp_path / "lbl", images, labels


def test_parse_and_scale(tiny_idx):
    img, lbl, images, labels = tiny_idx
    data = load_mnist_idx(img, lbl)
    assert data.x.shape == (3, 20)
    assert data.x[0, 0] == 1.0
    np.testing.assert_allclose(data.x, images.reshape(3, -1) / 255.0)
    assert data.y.tolist() == labels.tolist()
    assert load_mnist_idx(img, lbl, flatten=False).x.shape == (3, 4, 5)


def test_gzipped_files(tiny_idx, tmp_path):
    img, lbl, _, _ = tiny_idx
    for p in (img, lbl):
        (tmp_path / (p.name + ".gz")).write_bytes(gzip.compress(p.read_bytes()))
    data = load_mnist_idx(tmp_path / "img.gz", tmp_path / "lbl.gz")
    assert len(data) == 3


def test_truncation_reports_offset(tiny_idx, tmp_path):
    img, lbl, _, _ = tiny_idx
    cut = tmp_path / "cut"
    cut.write_bytes(img.read_bytes()[:30])
    with pytest.raises(IdxFormatError) as err:
        load_mnist_idx(cut, lbl)
    assert err.value.offset == 30 and "offset 30" in str(err.value)
    cut.write_bytes(img.read_bytes()[:6])
    with pytest.raises(IdxFormatError, match="header"):
        load_mnist_idx(cut, lbl)


def test_magic_and_count_mismatch(tiny_idx, tmp_path):
    img, lbl, _, _ = tiny_idx
    with pytest.raises(IdxFormatError, match="magic"):
        load_mnist_idx(img, img)
    write_idx(tmp_path / "two", np.array([1, 2], dtype=np.uint8))
    with pytest.raises(IdxFormatError, match="count mismatch"):
        load_mnist_idx(img, tmp_path / "two")
    write_idx(tmp_path / "bad", np.array([1, 12, 3], dtype=np.uint8))
    with pytest.raises(IdxFormatError, match="outside"):
        load_mnist_idx(img, tmp_path / "bad")


def test_standard_mnist_files(mnist_dir):
    train, test = load_mnist(mnist_dir)
    assert train.x.shape == (60000, 784) and test.x.shape == (10000, 784)
    assert set(np.unique(train.y)) == set(range(10))
    assert 0.0 <= train.x.min() and train.x.max() == 1.0


def test_parabola_values_and_determinism():
    grid = parabola_grid(1001)
    assert grid.x[500, 0] == 0.0 and grid.y[500, 0] == 0.0
    assert grid.y[0, 0] == 1.0 and grid.y[-1, 0] == 1.0
    a, b = gen_parabola(10_000, 42), gen_parabola(10_000, 42)
    assert hashlib.sha256(a.x.tobytes()).hexdigest() == hashlib.sha256(b.x.tobytes()).hexdigest()
    assert np.all(np.abs(a.x) <= 1) and np.array_equal(a.y, a.x ** 2)
    assert not np.array_equal(a.x, gen_parabola(10_000, 43).x)


def test_patches_from_array_and_directory(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.uniform(size=(5, 20, 20))
    p = gen_patches(images, 100, seed=1)
    assert p.x.shape == (100, 64) and np.array_equal(p.x, p.y)
    assert p.x.min() >= 0.0 and p.x.max() <= 1.0
    assert np.array_equal(p.x, gen_patches(images, 100, seed=1).x)

    Image = pytest.importorskip("PIL.Image")
    for i, im in enumerate(images):
        Image.fromarray((im * 255).astype(np.uint8)).save(tmp_path / f"{i}.png")
    q = gen_patches(tmp_path, 50, seed=2)
    assert q.x.shape == (50, 64) and q.x.max() <= 1.0


def test_patches_from_idx_and_errors(tiny_idx, tmp_path):
    img, _, _, _ = tiny_idx
    with pytest.raises(Exception):
        gen_patches(img, 10, seed=0)  # 4x5 images are smaller than a patch
    big = (np.random.default_rng(0).uniform(size=(2, 10, 10)) * 255).astype(np.uint8)
    write_idx(tmp_path / "big", big)
    assert gen_patches(tmp_path / "big", 5, seed=0).x.shape == (5, 64)
    with pytest.raises(FileNotFoundError):
        gen_patches(tmp_path / "missing", 5, seed=0)
