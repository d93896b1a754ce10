"""Dataset generation and ingestion.

Synthetic regression data follows a fixed protocol: Gaussian inputs,
generating weights drawn uniformly from [-1, 1], Gaussian label noise.
MNIST is read from the standard big-endian IDX pair (images + labels),
plain or gzipped, with pixels scaled to [0, 1].  Nothing here downloads
anything; point LOWPREC_DATA_DIR (or --data-dir) at a directory that
already holds the IDX files.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .models import LinRegDataset
from .quant import RngStream

__all__ = [
    "SyntheticSpec",
    "MnistDataset",
    "gen_synthetic_linreg",
    "save_linreg_dataset",
    "load_linreg_dataset",
    "load_mnist_idx",
    "load_mnist_split",
    "mnist_available",
    "mnist_dir",
    "batch_iter",
]

DATA_DIR_ENV = "LOWPREC_DATA_DIR"

_CACHE_MAGIC = b"SWLP0001"
_IMAGE_MAGIC = 0x00000803
_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class SyntheticSpec:
    dim: int
    n_samples: int
    sigma_x: float = 1.0
    sigma_u: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.n_samples > self.dim > 0:
            raise ValueError("need n_samples > dim > 0")
        if self.sigma_x <= 0 or self.sigma_u < 0:
            raise ValueError("sigmas must be positive")


def gen_synthetic_linreg(spec: SyntheticSpec) -> LinRegDataset:
    """Deterministic synthetic regression set for the given seed.

    Draw order is fixed (w_init, then X, then label noise) so regenerating
    with the same seed gives identical bytes.
    """
    rng = RngStream.derive(spec.seed, "synthetic-linreg")
    w_init = 2.0 * rng.uniforms(spec.dim) - 1.0
    x = spec.sigma_x * rng.normals(spec.n_samples * spec.dim).reshape(
        spec.n_samples, spec.dim
    )
    y = x @ w_init + spec.sigma_u * rng.normals(spec.n_samples)
    return LinRegDataset(x=x, y=y, w_init=w_init)


def save_linreg_dataset(data: LinRegDataset, path: str | Path) -> None:
    """Cache format: magic, little-endian n and d (8 bytes each), then
    row-major float64 X, y, w_init."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<qq", data.n, data.dim))
        f.write(data.x.astype("<f8").tobytes(order="C"))
        f.write(data.y.astype("<f8").tobytes())
        f.write(data.w_init.astype("<f8").tobytes())


def load_linreg_dataset(path: str | Path) -> LinRegDataset:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _CACHE_MAGIC:
            raise ValueError(f"not a cached dataset file: bad magic {magic!r}")
        n, d = struct.unpack("<qq", f.read(16))
        x = np.frombuffer(f.read(8 * n * d), dtype="<f8").reshape(n, d)
        y = np.frombuffer(f.read(8 * n), dtype="<f8")
        w_init = np.frombuffer(f.read(8 * d), dtype="<f8")
        if x.size != n * d or y.size != n or w_init.size != d:
            raise ValueError("truncated file")
    return LinRegDataset(x=x.copy(), y=y.copy(), w_init=w_init.copy())


@dataclass
class MnistDataset:
    images: np.ndarray  # (n, 784) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64 in [0, 9]
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 2 or self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images/labels length mismatch")

    @property
    def n(self) -> int:
        return self.images.shape[0]


def _open_maybe_gz(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_mnist_idx(images_path: str | Path, labels_path: str | Path) -> MnistDataset:
    """Parse an IDX image/label file pair.

    Images: magic 0x803, then n/rows/cols as big-endian int32, then
    n*rows*cols unsigned bytes.  Labels: magic 0x801, then n, then n
    bytes.  Pixels are divided by 255.
    """
    with _open_maybe_gz(Path(images_path)) as f:
        magic_raw = f.read(4)
        if len(magic_raw) < 4:
            raise ValueError("truncated file")
        (magic,) = struct.unpack(">i", magic_raw)
        if magic != _IMAGE_MAGIC:
            raise ValueError(f"not an IDX image file (magic {magic:#010x})")
        dims = f.read(12)
        if len(dims) < 12:
            raise ValueError("truncated file")
        n, rows, cols = struct.unpack(">iii", dims)
        raw = f.read(n * rows * cols)
        if len(raw) != n * rows * cols:
            raise ValueError("truncated file")
        images = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
        images = images.reshape(n, rows * cols)

    with _open_maybe_gz(Path(labels_path)) as f:
        magic_raw = f.read(4)
        if len(magic_raw) < 4:
            raise ValueError("truncated file")
        (magic,) = struct.unpack(">i", magic_raw)
        if magic != _LABEL_MAGIC:
            raise ValueError(f"not an IDX label file (magic {magic:#010x})")
        count_raw = f.read(4)
        if len(count_raw) < 4:
            raise ValueError("truncated file")
        (n_labels,) = struct.unpack(">i", count_raw)
        raw = f.read(n_labels)
        if len(raw) != n_labels:
            raise ValueError("truncated file")
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if n != n_labels:
        raise ValueError(f"image/label count mismatch: {n} vs {n_labels}")
    return MnistDataset(images=images, labels=labels)


_SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def mnist_dir(data_dir: str | Path | None = None) -> Path | None:
    """Resolve the MNIST directory from the argument or the environment."""
    if data_dir is None:
        data_dir = os.environ.get(DATA_DIR_ENV)
    if data_dir is None:
        return None
    return Path(data_dir)


def mnist_available(data_dir: str | Path | None = None) -> bool:
    """True when both conventional split file pairs are present."""
    base = mnist_dir(data_dir)
    if base is None or not base.is_dir():
        return False
    for img_name, lbl_name in _SPLIT_FILES.values():
        for name in (img_name, lbl_name):
            if not (base / name).exists() and not (base / (name + ".gz")).exists():
                return False
    return True


def load_mnist_split(data_dir: str | Path, split: str = "train") -> MnistDataset:
    """Load a split by its conventional file names (plain or .gz)."""
    base = Path(data_dir)
    img_name, lbl_name = _SPLIT_FILES[split]
    img = base / img_name
    lbl = base / lbl_name
    if not img.exists():
        img = base / (img_name + ".gz")
    if not lbl.exists():
        lbl = base / (lbl_name + ".gz")
    if not img.exists() or not lbl.exists():
        raise FileNotFoundError(f"no MNIST {split} files under {base}")
    ds = load_mnist_idx(img, lbl)
    ds.split = split
    return ds


def batch_iter(n: int, batch_size: int, rng: RngStream) -> Iterator[np.ndarray]:
    """Endless stream of index batches, reshuffled each epoch.

    Every index appears exactly once per epoch; the trailing short batch
    is kept.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]
