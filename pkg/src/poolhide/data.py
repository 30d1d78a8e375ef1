"""Dataset ingestion: IDX (MNIST) files, a synthetic fallback, permutations, splits."""

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import rng

_IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """Inputs plus class labels (classification) or target vectors."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise DataError(f"inputs {self.X.shape} and targets {np.shape(self.y)} do not align")

    def __len__(self):
        return len(self.X)

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx])


def read_idx(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise DataError(f"{path}: not an IDX file")
    dtype = _IDX_DTYPES.get(data[2])
    if dtype is None:
        raise DataError(f"{path}: unknown IDX type code {data[2]:#x}")
    ndim = data[3]
    dims = struct.unpack(">" + "I" * ndim, data[4:4 + 4 * ndim])
    arr = np.frombuffer(data, dtype=dtype, offset=4 + 4 * ndim)
    if arr.size != int(np.prod(dims)):
        raise DataError(f"{path}: payload size {arr.size} does not match header {dims}")
    return arr.reshape(dims)


def write_idx(path, arr):
    arr = np.asarray(arr)
    code = {np.dtype("uint8"): 0x08, np.dtype("int8"): 0x09}.get(arr.dtype)
    if code is None:
        raise DataError("only uint8/int8 arrays are written")
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(">" + "I" * arr.ndim, *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header + arr.tobytes())


def _find(directory, stem):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        p = os.path.join(directory, name)
        if os.path.exists(p):
            return p
    raise DataError(f"{stem} not found in {directory}")


def load_mnist(directory, split="train"):
    """MNIST from standard IDX files, pixels scaled to [0, 1]."""
    prefix = "train" if split == "train" else "t10k"
    images = read_idx(_find(directory, f"{prefix}-images-idx3-ubyte"))
    labels = read_idx(_find(directory, f"{prefix}-labels-idx1-ubyte"))
    X = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(X, labels.astype(np.int64))


def synthetic_blobs(n, seed=0, n_classes=10, side=28, latent_dim=16, separation=1.2, noise=0.05):
    """Seeded 10-class image-like dataset with Gaussian class blobs in a latent space.

    Latent codes are drawn around per-class centres and rendered to
    ``side * side`` pixels through a fixed smooth random basis and a sigmoid,
    so classes overlap and an MLP has real work to do. The class centres and
    basis depend only on ``seed``; ``n`` only changes how many samples are drawn.
    """
    dim = side * side
    centers = separation * rng.normal(seed, rng.DATA, n_classes * latent_dim).reshape(n_classes, latent_dim)

    # smooth basis: each latent direction is a sum of 3 Gaussian bumps
    params = rng.uniform(rng.derive(seed, 1), rng.DATA, latent_dim * 3 * 4).reshape(latent_dim, 3, 4)
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    basis = np.zeros((latent_dim, dim))
    for j in range(latent_dim):
        img = np.zeros((side, side))
        for cy, cx, width, sign in params[j]:
            w = 0.08 + 0.2 * width
            img += (1.0 if sign > 0.5 else -1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * w * w))
        basis[j] = img.ravel()

    labels = (rng.uniform(rng.derive(seed, 2, n), rng.DATA, n) * n_classes).astype(np.int64)
    z = centers[labels] + rng.normal(rng.derive(seed, 3, n), rng.DATA, n * latent_dim).reshape(n, latent_dim)
    logits = 1.5 * z @ basis / np.sqrt(latent_dim)
    X = 1.0 / (1.0 + np.exp(-logits))
    X = X + noise * rng.normal(rng.derive(seed, 4, n), rng.DATA, n * dim).reshape(n, dim)
    return Dataset(np.clip(X, 0.0, 1.0), labels)


def load_dataset(source, n=None, seed=0, split="train"):
    """``source`` is a directory of MNIST IDX files or the string ``"synthetic"``."""
    if source in (None, "", "synthetic"):
        if n is None:
            raise DataError("synthetic data needs a sample count")
        # disjoint draws for train and test
        return synthetic_blobs(n, seed=seed) if split == "train" else _synthetic_test(n, seed)
    ds = load_mnist(source, split)
    if n is not None:
        if n > len(ds):
            raise DataError(f"asked for {n} samples but {source} has {len(ds)}")
        idx = np.sort(rng.permutation(rng.derive(seed, n), rng.DATA, len(ds))[:n])
        ds = ds.subset(idx)
    return ds


def _synthetic_test(n, seed):
    full = synthetic_blobs(2 * n, seed=seed)
    return full.subset(np.arange(n, 2 * n))


def pixel_permutation(perm_seed, dim):
    """Fixed pixel permutation for one task; ``perm_seed=None`` is the identity."""
    if perm_seed is None:
        return np.arange(dim, dtype=np.int64)
    return rng.permutation(perm_seed, rng.PERMUTE, dim)


def permute_pixels(ds, perm_seed):
    perm = pixel_permutation(perm_seed, ds.X.shape[1])
    return Dataset(ds.X[:, perm], ds.y.copy())


def train_val_split(ds, fraction=0.1, seed=0):
    if not 0 < fraction < 1:
        raise DataError("validation fraction must be in (0, 1)")
    order = rng.permutation(seed, rng.SPLIT, len(ds))
    n_val = max(1, int(round(fraction * len(ds))))
    return ds.subset(np.sort(order[n_val:])), ds.subset(np.sort(order[:n_val]))
