import gzip
import struct

import numpy as np
import pytest

from efld.data import (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, SynthSpec, corrupt_labels, data_dir_from_env, load_idx,
                       mnist_available, mnist_splits, read_idx, synth_dataset, synth_splits)
from efld.errors import ConfigError, FormatError


def write_idx(path, magic, arr, gz=False):
    arr = np.asarray(arr, dtype=np.uint8)
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in arr.shape)
    raw = header + arr.tobytes()
    if gz:
        raw = gzip.compress(raw)
    path.write_bytes(raw)
    return path


@pytest.fixture
def mnist_dir(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(60, 4, 4))
    labels = np.arange(60) % 10
    write_idx(tmp_path / "train-images-idx3-ubyte", IDX_IMAGES_MAGIC, imgs)
    write_idx(tmp_path / "train-labels-idx1-ubyte", IDX_LABELS_MAGIC, labels)
    write_idx(tmp_path / "t10k-images-idx3-ubyte.gz", IDX_IMAGES_MAGIC, imgs[:20], gz=True)
    write_idx(tmp_path / "t10k-labels-idx1-ubyte.gz", IDX_LABELS_MAGIC, labels[:20], gz=True)
    return tmp_path


def test_read_idx_round_trip(tmp_path):
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    p = write_idx(tmp_path / "x", IDX_IMAGES_MAGIC, arr)
    np.testing.assert_array_equal(read_idx(p, IDX_IMAGES_MAGIC), arr)
    pg = write_idx(tmp_path / "x.gz", IDX_IMAGES_MAGIC, arr, gz=True)
    np.testing.assert_array_equal(read_idx(pg, IDX_IMAGES_MAGIC), arr)


def test_read_idx_errors(tmp_path):
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    p = write_idx(tmp_path / "x", IDX_IMAGES_MAGIC, arr)
    with pytest.raises(FormatError, match="magic") as ei:
        read_idx(p, IDX_LABELS_MAGIC)
    assert ei.value.offset == 0
    trunc = tmp_path / "t"
    trunc.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(FormatError) as ei:
        read_idx(trunc, IDX_IMAGES_MAGIC)
    assert ei.value.offset is not None
    short = tmp_path / "s"
    short.write_bytes(b"\x00\x00")
    with pytest.raises(FormatError, match="header"):
        read_idx(short, IDX_IMAGES_MAGIC)
    with pytest.raises(FormatError):
        read_idx(tmp_path / "missing", IDX_IMAGES_MAGIC)


def test_load_idx_normalizes(mnist_dir):
    ds = load_idx(mnist_dir / "train-images-idx3-ubyte", mnist_dir / "train-labels-idx1-ubyte")
    assert ds.X.shape == (60, 16)
    assert abs(ds.X.mean()) < 1e-12
    assert ds.X.std() == pytest.approx(1.0)
    assert ds.num_classes == 10


def test_load_idx_count_mismatch(tmp_path):
    write_idx(tmp_path / "i", IDX_IMAGES_MAGIC, np.zeros((3, 2, 2)))
    write_idx(tmp_path / "l", IDX_LABELS_MAGIC, np.zeros(2))
    with pytest.raises(FormatError, match="labels"):
        load_idx(tmp_path / "i", tmp_path / "l")


def test_mnist_splits_disjoint(mnist_dir):
    assert mnist_available(mnist_dir)
    assert not mnist_available(None)
    train, test = mnist_splits(mnist_dir, 20, 0, n_test=10)
    assert train.n == 20 and train.pool_size == 5 and test.n == 10
    rows = {tuple(r) for r in train.X}
    assert not rows & {tuple(r) for r in train.pool_X}
    with pytest.raises(ConfigError):
        mnist_splits(mnist_dir, 55, 0)


def test_synth_splits_shapes_and_determinism():
    spec = SynthSpec(dim=5, n=100, classes=3, separation=4.0, n_test=30)
    a_train, a_test = synth_splits(spec, 7)
    b_train, _ = synth_splits(spec, 7)
    np.testing.assert_array_equal(a_train.X, b_train.X)
    assert a_train.n == 100 and a_train.pool_size == 25 and a_test.n == 30
    assert synth_dataset(spec, 7).n == 100
    with pytest.raises(ConfigError):
        SynthSpec(dim=5, n=1).validate()


def test_synth_class_means_are_separated():
    spec = SynthSpec(dim=10, n=20000, classes=4, separation=5.0)
    train, _ = synth_splits(spec, 0)
    means = np.array([train.X[train.y == k].mean(axis=0) for k in range(4)])
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.linalg.norm(means[i] - means[j]) == pytest.approx(5.0, abs=0.1)


def test_corrupt_labels_exact_count():
    spec = SynthSpec(dim=3, n=1000, classes=10)
    train, _ = synth_splits(spec, 0)
    for frac in (0.0, 0.2, 0.6, 1.0):
        c = corrupt_labels(train, frac, 1)
        assert int(np.sum(c.y != train.y)) == int(np.floor(frac * train.n))
        assert int(np.sum(c.pool_y != train.pool_y)) == int(np.floor(frac * train.pool_size))
        assert c.y.min() >= 0 and c.y.max() < 10
    kept = corrupt_labels(train, 0.5, 1, include_pool=False)
    np.testing.assert_array_equal(kept.pool_y, train.pool_y)
    with pytest.raises(ConfigError):
        corrupt_labels(train, 1.5, 0)


def test_corrupted_labels_are_uniform_over_others():
    spec = SynthSpec(dim=3, n=20000, classes=4)
    train, _ = synth_splits(spec, 0)
    c = corrupt_labels(train, 1.0, 2, include_pool=False)
    shift = (c.y - train.y) % 4
    counts = np.bincount(shift, minlength=4)
    assert counts[0] == 0
    np.testing.assert_allclose(counts[1:] / counts[1:].sum(), 1 / 3, atol=0.02)


def test_data_dir_env(monkeypatch):
    monkeypatch.setenv("EFLD_DATA_DIR", "/env/dir")
    assert data_dir_from_env(None) == "/env/dir"
    assert data_dir_from_env("/cli") == "/cli"
    monkeypatch.delenv("EFLD_DATA_DIR")
    assert data_dir_from_env(None) is None
