"""Dataset ingestion: MNIST IDX files, the parabola toy task and image patches."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import IdxFormatError, InvalidArgumentError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

PathLike = Union[str, os.PathLike]


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return Dataset(self.x[:n_first], self.y[:n_first]), Dataset(self.x[n_first:], self.y[n_first:])


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(buf: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise IdxFormatError(f"{what}: truncated header, {len(buf)} bytes", offset=len(buf))
    (found,) = struct.unpack_from(">I", buf, 0)
    if found != magic:
        raise IdxFormatError(f"{what}: bad magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    expected = int(np.prod(dims, dtype=np.int64))
    have = len(buf) - header
    if have < expected:
        raise IdxFormatError(f"{what}: truncated payload, expected {expected} bytes after header, got {have}",
                             offset=len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=expected, offset=header).reshape(dims)


def load_mnist_idx(images_path: PathLike, labels_path: PathLike, flatten: bool = True) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, 3, "images")
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, 1, "labels")
    if len(images) != len(labels):
        raise IdxFormatError(f"count mismatch: {len(images)} images vs {len(labels)} labels")
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise IdxFormatError(f"label {labels[bad]} outside 0-9", offset=8 + bad)
    x = images.astype(np.float64) / 255.0
    if flatten:
        x = x.reshape(len(x), -1)
    return Dataset(x, labels.astype(np.int64))


def load_idx_images(path: PathLike) -> np.ndarray:
    return _parse_idx(_read_bytes(path), IMAGES_MAGIC, 3, "images").astype(np.float64) / 255.0


def write_idx(path: PathLike, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (3-D images or 1-D labels)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = IMAGES_MAGIC if array.ndim == 3 else LABELS_MAGIC
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def find_mnist(directory: Optional[PathLike] = None) -> Optional[dict]:
    """Locate the four standard MNIST files in ``directory`` or ``$MNIST_DIR``."""
    directory = directory or os.environ.get("MNIST_DIR")
    if not directory:
        return None
    base = Path(directory)
    names = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    found = {}
    for key, name in names.items():
        for candidate in (base / name, base / f"{name}.gz"):
            if candidate.exists():
                found[key] = candidate
                break
        else:
            return None
    return found


def load_mnist(directory: Optional[PathLike] = None) -> tuple[Dataset, Dataset]:
    paths = find_mnist(directory)
    if paths is None:
        raise FileNotFoundError("MNIST IDX files not found; pass a directory or set MNIST_DIR")
    train = load_mnist_idx(paths["train_images"], paths["train_labels"])
    test = load_mnist_idx(paths["test_images"], paths["test_labels"])
    return train, test


def gen_parabola(n: int, seed: int) -> Dataset:
    """``n`` pairs ``(x, x**2)`` with ``x`` uniform on [-1, 1]."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 1))
    return Dataset(x, x ** 2)


def parabola_grid(points: int = 1001) -> Dataset:
    x = np.linspace(-1.0, 1.0, points).reshape(-1, 1)
    return Dataset(x, x ** 2)


def _images_from_dir(directory: Path) -> list[np.ndarray]:
    from PIL import Image

    out = []
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff"}:
            continue
        with Image.open(path) as im:
            out.append(np.asarray(im.convert("L"), dtype=np.float64) / 255.0)
    return out


def gen_patches(source, n: int, seed: int, patch: int = 8, min_ink: float = 0.05) -> Dataset:
    """Random ``patch`` x ``patch`` crops flattened to vectors in [0, 1].

    ``source`` is an image directory, an IDX image file, or an array of
    images shaped (count, H, W). Crops whose mean intensity is below
    ``min_ink`` are redrawn (up to a bounded number of attempts) so the set
    is not dominated by blank background. Targets equal inputs.
    """
    if isinstance(source, (str, os.PathLike)):
        path = Path(source)
        if path.is_dir():
            images = _images_from_dir(path)
        elif path.is_file():
            images = list(load_idx_images(path))
        else:
            raise FileNotFoundError(f"unreadable patch source: {path}")
    else:
        images = list(np.asarray(source, dtype=np.float64))
    images = [im for im in images if im.shape[0] >= patch and im.shape[1] >= patch]
    if not images:
        raise InvalidArgumentError("no image large enough for the requested patch size")
    rng = np.random.default_rng(seed)
    out = np.empty((n, patch * patch))
    for k in range(n):
        for _ in range(50):
            im = images[int(rng.integers(len(images)))]
            r = int(rng.integers(im.shape[0] - patch + 1))
            c = int(rng.integers(im.shape[1] - patch + 1))
            crop = im[r:r + patch, c:c + patch]
            if crop.mean() >= min_ink:
                break
        out[k] = crop.ravel()
    return Dataset(out, out.copy())
