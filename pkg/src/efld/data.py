"""Datasets: synthetic Gaussian blobs, IDX (MNIST-format) files, label corruption."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

__all__ = [
    "Dataset",
    "SynthSpec",
    "synth_splits",
    "synth_dataset",
    "read_idx",
    "load_idx",
    "mnist_splits",
    "corrupt_labels",
    "POOL_FRACTION",
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
]

POOL_FRACTION = 0.2
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Training examples ``(X, y)`` plus a disjoint held-out pool for replacement draws."""

    X: np.ndarray
    y: np.ndarray
    num_classes: int
    pool_X: np.ndarray | None = None
    pool_y: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ConfigError("dataset needs a 2-D feature array and one label per row")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ConfigError(f"labels must lie in [0, {self.num_classes})")
        if self.pool_X is not None and self.pool_X.shape[1:] != self.X.shape[1:]:
            raise ConfigError("pool features must share the training feature dimension")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def pool_size(self) -> int:
        return 0 if self.pool_X is None else self.pool_X.shape[0]

    def example(self, i: int) -> tuple[np.ndarray, int]:
        return self.X[i], int(self.y[i])

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx])


@dataclass(frozen=True)
class SynthSpec:
    """Gaussian class blobs with unit within-class variance.

    Class means are ``separation`` apart pairwise.  ``n`` is the number of
    training examples; a pool of ``n * POOL_FRACTION / (1 - POOL_FRACTION)``
    extra points (20% of everything generated for training) is held out, and
    ``n_test`` further points form an independent test split.
    """

    dim: int
    n: int
    classes: int = 2
    separation: float = 3.0
    n_test: int | None = None

    def validate(self) -> None:
        if self.n < 2:
            raise ConfigError("data.n must be >= 2")
        if self.dim < 1:
            raise ConfigError("data.dim must be >= 1")
        if self.classes < 2:
            raise ConfigError("data.classes must be >= 2")
        if not self.separation >= 0:
            raise ConfigError("data.separation must be >= 0")


def _class_means(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    k, d = spec.classes, spec.dim
    if k <= d:
        # Orthonormal directions scaled so every pair sits `separation` apart.
        q, _ = np.linalg.qr(rng.standard_normal((d, k)))
        return q.T * (spec.separation / np.sqrt(2.0))
    u = rng.standard_normal((k, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u * (spec.separation / 2.0)


def _draw(means: np.ndarray, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    y = rng.integers(0, means.shape[0], size=m)
    X = means[y] + rng.standard_normal((m, means.shape[1]))
    return X, y


def synth_splits(spec: SynthSpec, seed: int) -> tuple[Dataset, Dataset]:
    """Return ``(train_with_pool, test)`` drawn from the same blob law."""
    spec.validate()
    ss = np.random.SeedSequence(seed)
    r_means, r_train, r_test = (np.random.default_rng(s) for s in ss.spawn(3))
    means = _class_means(spec, r_means)
    n_pool = max(2, int(round(spec.n * POOL_FRACTION / (1.0 - POOL_FRACTION))))
    X, y = _draw(means, spec.n + n_pool, r_train)
    n_test = spec.n if spec.n_test is None else spec.n_test
    Xt, yt = _draw(means, n_test, r_test)
    train = Dataset(X[: spec.n], y[: spec.n], spec.classes, X[spec.n:], y[spec.n:])
    test = Dataset(Xt, yt, spec.classes)
    return train, test


def synth_dataset(spec: SynthSpec, seed: int) -> Dataset:
    return synth_splits(spec, seed)[0]


def _open(path) -> bytes:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse a big-endian IDX file of unsigned bytes into an array."""
    raw = _open(path)
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08X}, expected 0x{expected_magic:08X}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header", offset=len(raw))
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise FormatError(
            f"{path}: payload has {len(raw) - header} bytes, header declares {count}", offset=header
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def _zscore_stats(images: np.ndarray) -> tuple[float, float]:
    x = images.astype(float) / 255.0
    return float(x.mean()), float(x.std())


def load_idx(images_path, labels_path, stats: tuple[float, float] | None = None) -> Dataset:
    """Load an IDX image/label pair, scale pixels to [0, 1] and z-score them.

    ``stats`` is the (mean, std) to use; by default the file's own statistics,
    which is right for a training file.  Pass the training statistics when
    loading a test file.
    """
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images_path} has {images.shape[0]} images but {labels_path} has {labels.shape[0]} labels",
                          offset=4)
    mean, std = stats if stats is not None else _zscore_stats(images)
    X = (images.reshape(images.shape[0], -1).astype(float) / 255.0 - mean) / (std if std > 0 else 1.0)
    y = labels.astype(np.int64)
    return Dataset(X, y, 10 if y.size == 0 else max(10, int(y.max()) + 1))


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(data_dir: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        p = data_dir / name
        if p.exists():
            return p
    return None


def mnist_available(data_dir) -> bool:
    if data_dir is None:
        return False
    d = Path(data_dir)
    return all(_find(d, s) is not None for pair in MNIST_FILES.values() for s in pair)


def mnist_splits(data_dir, n: int, seed: int, n_test: int | None = None) -> tuple[Dataset, Dataset]:
    """Random training subset of size ``n`` with a disjoint held-out pool, plus the test file.

    The pool holds ``n / 4`` further training-file images (20% of the points
    drawn), so it never overlaps the training subset or the test set.
    """
    d = Path(data_dir)
    paths = {k: tuple(_find(d, s) for s in v) for k, v in MNIST_FILES.items()}
    for k, (pi, pl) in paths.items():
        if pi is None or pl is None:
            raise FormatError(f"MNIST {k} files not found in {d}")
    full = load_idx(*paths["train"])
    stats = _zscore_stats(read_idx(paths["train"][0], IDX_IMAGES_MAGIC))
    test = load_idx(*paths["test"], stats=stats)
    n_pool = max(2, int(round(n * POOL_FRACTION / (1.0 - POOL_FRACTION))))
    if n + n_pool > full.n:
        raise ConfigError(f"data.n={n} plus pool {n_pool} exceeds the {full.n} training images")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    idx = rng.permutation(full.n)
    tr, pool = idx[:n], idx[n:n + n_pool]
    train = Dataset(full.X[tr], full.y[tr], 10, full.X[pool], full.y[pool])
    if n_test is not None and n_test < test.n:
        test = test.subset(rng.permutation(test.n)[:n_test])
    return train, test


def _flip(y: np.ndarray, idx: np.ndarray, classes: int, rng: np.random.Generator) -> np.ndarray:
    out = y.copy()
    # Shift by 1..classes-1 so the new label always differs and is uniform over the others.
    shift = rng.integers(1, classes, size=idx.size)
    out[idx] = (y[idx] + shift) % classes
    return out


def corrupt_labels(dataset: Dataset, fraction: float, seed: int, include_pool: bool = True) -> Dataset:
    """Give exactly ``floor(fraction * n)`` training examples a different, uniformly random label.

    With ``include_pool`` the held-out pool is corrupted at the same rate, so
    replacement draws come from the same (corrupted) distribution as training.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"corruption fraction must lie in [0, 1], got {fraction!r}")
    rng_train, rng_pool = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    k = int(np.floor(fraction * dataset.n))
    idx = rng_train.choice(dataset.n, size=k, replace=False)
    y = _flip(dataset.y, idx, dataset.num_classes, rng_train)
    pool_y = dataset.pool_y
    if include_pool and pool_y is not None:
        kp = int(np.floor(fraction * pool_y.size))
        pidx = rng_pool.choice(pool_y.size, size=kp, replace=False)
        pool_y = _flip(pool_y, pidx, dataset.num_classes, rng_pool)
    return replace(dataset, y=y, pool_y=pool_y)


def data_dir_from_env(cli_value: str | None) -> str | None:
    return cli_value if cli_value else os.environ.get("EFLD_DATA_DIR")
