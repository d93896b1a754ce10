"""Shared fixtures: a small on-disk IDX dataset with learnable structure."""

import struct

import numpy as np
import pytest

from lowprec.quant import RngStream


def write_idx_pair(dirpath, images_u8, labels, prefix="train"):
    """Write a conventional-named IDX image/label pair."""
    n = images_u8.shape[0]
    img_bytes = struct.pack(">iiii", 0x803, n, 28, 28) + images_u8.tobytes()
    lbl_bytes = struct.pack(">ii", 0x801, n) + bytes(int(v) for v in labels)
    names = {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    }[prefix]
    (dirpath / names[0]).write_bytes(img_bytes)
    (dirpath / names[1]).write_bytes(lbl_bytes)


def synth_digits(n, seed):
    """Class-structured 28x28 images: one bright block per class."""
    rng = RngStream.derive(seed, "fake-mnist")
    labels = rng.integers(0, 10, n)
    images = np.zeros((n, 28, 28))
    for i, c in enumerate(labels):
        r, col = divmod(int(c), 4)
        images[i, 7 * r : 7 * r + 9, 7 * col : 7 * col + 7] = 0.85
    images += 0.12 * rng.normals(n * 784).reshape(n, 28, 28)
    images = np.clip(images, 0.0, 1.0)
    return (images * 255).astype(np.uint8).reshape(n, 784), labels


@pytest.fixture(scope="session")
def fake_mnist_dir(tmp_path_factory):
    """Directory with small IDX train/test splits in MNIST layout."""
    d = tmp_path_factory.mktemp("idx")
    train_imgs, train_labels = synth_digits(240, seed=1)
    test_imgs, test_labels = synth_digits(80, seed=2)
    write_idx_pair(d, train_imgs.reshape(240, 784), train_labels, "train")
    write_idx_pair(d, test_imgs.reshape(80, 784), test_labels, "test")
    return d
