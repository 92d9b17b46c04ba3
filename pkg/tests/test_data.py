import gzip
import os
import struct
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from flcc.data import (AttackKind, AttackSpec, LabeledDataset, PartitionSpec, apply_attack, bundled_paths,
                       corrupt_params, flip_labels, load_idx, manifest_rows, partition, write_idx)
from flcc.errors import FormatError, InsufficientDataError, InvalidParameterError


def _write(tmp_path, img, lbl, gz=False):
    ip, lp = tmp_path / "img", tmp_path / "lbl"
    ip.write_bytes(gzip.compress(img) if gz else img)
    lp.write_bytes(gzip.compress(lbl) if gz else lbl)
    return ip, lp


def test_bundled_subset_shape(mnist_train, mnist_heldout):
    assert len(mnist_train) == 8000 and len(mnist_heldout) == 2000
    assert mnist_train.images.shape[1:] == (28, 28)
    assert set(np.unique(mnist_train.labels)) == set(range(10))


def test_dims_come_from_header():
    raw = gzip.decompress(bundled_paths("train")[0].read_bytes())
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    assert (magic, rows, cols) == (0x803, 28, 28)


def test_non_square_images_follow_header(tmp_path):
    ds = LabeledDataset(np.arange(2 * 3 * 5, dtype=np.uint8).reshape(2, 3, 5), np.array([1, 2]))
    back = load_idx(*_write(tmp_path, *write_idx(ds)))
    assert back.images.shape == (2, 3, 5)


@pytest.mark.skipif(not os.environ.get("FLCC_MNIST_DIR"), reason="canonical MNIST files not supplied")
def test_canonical_training_files_have_60000_items():
    root = Path(os.environ["FLCC_MNIST_DIR"])
    ds = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
    assert len(ds) == 60_000


def test_roundtrip_reproduces_original_bytes(tmp_path):
    img_path, lbl_path = bundled_paths("t10k")
    original = (gzip.decompress(img_path.read_bytes()), gzip.decompress(lbl_path.read_bytes()))
    assert write_idx(load_idx(img_path, lbl_path)) == original
    ds = load_idx(*_write(tmp_path, *original))
    assert write_idx(ds) == original


def test_wrong_magic_rejected(tmp_path):
    img, lbl = write_idx(LabeledDataset(np.zeros((2, 2, 2), np.uint8), np.array([0, 1])))
    bad_lbl = struct.pack(">I", 0x803) + lbl[4:]
    with pytest.raises(FormatError, match="labels.*magic"):
        load_idx(*_write(tmp_path, img, bad_lbl))


def test_truncated_and_mismatched(tmp_path):
    img, lbl = write_idx(LabeledDataset(np.zeros((3, 2, 2), np.uint8), np.array([0, 1, 2])))
    with pytest.raises(FormatError, match="truncated"):
        load_idx(*_write(tmp_path, img[:-1], lbl))
    _, short_lbl = write_idx(LabeledDataset(np.zeros((2, 2, 2), np.uint8), np.array([0, 1])))
    with pytest.raises(FormatError, match="count mismatch"):
        load_idx(*_write(tmp_path, img, short_lbl, gz=True))


def test_partition_sizes_in_range(mnist_train):
    parts, idx = partition(mnist_train, list(range(50)), PartitionSpec(), np.random.default_rng(0))
    for k, ds in parts.items():
        assert 100 <= len(ds) <= 200
        assert len(np.unique(idx[k])) == len(idx[k])
        assert np.array_equal(ds.labels, mnist_train.labels[idx[k]])


def test_partition_whole_set_to_single_node():
    ds = LabeledDataset(np.zeros((30, 2, 2), np.uint8), np.arange(30) % 10)
    parts, idx = partition(ds, [7], PartitionSpec(30, 30, False), np.random.default_rng(1))
    assert np.array_equal(idx[7], np.arange(30))


def test_partition_size_distribution_is_uniform(mnist_train):
    rng = np.random.default_rng(2)
    sizes = []
    for _ in range(1000):
        parts, _ = partition(mnist_train, [0], PartitionSpec(100, 200), rng)
        sizes.append(len(parts[0]))
    counts = np.bincount(np.array(sizes) - 100, minlength=101)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_partition_no_overlap_conservation(mnist_train):
    parts, idx = partition(mnist_train, list(range(40)), PartitionSpec(100, 200, False), np.random.default_rng(3))
    allidx = np.concatenate(list(idx.values()))
    assert len(np.unique(allidx)) == len(allidx)
    assert allidx.max() < len(mnist_train)


def test_partition_no_overlap_insufficient():
    ds = LabeledDataset(np.zeros((50, 2, 2), np.uint8), np.arange(50) % 10)
    with pytest.raises(InsufficientDataError):
        partition(ds, [0, 1, 2], PartitionSpec(20, 30, False), np.random.default_rng(0))
    with pytest.raises(InvalidParameterError):
        partition(ds, [0], PartitionSpec(10, 60), np.random.default_rng(0))


def test_label_flip_cycle():
    ds = LabeledDataset(np.zeros((10, 2, 2), np.uint8), np.arange(10))
    twice = flip_labels(flip_labels(ds))
    assert not np.array_equal(twice.labels, ds.labels)
    out = ds
    for _ in range(10):
        out = apply_attack(out, AttackSpec(AttackKind.LABEL_FLIP))
    assert np.array_equal(out.labels, ds.labels)
    assert out.images.shape == ds.images.shape and out.labels.max() < 10


def test_parameter_attacks():
    rng = np.random.default_rng(0)
    w = rng.normal(size=20)
    assert np.array_equal(corrupt_params(w, w, AttackSpec(AttackKind.SIGN_FLIP_GRADIENT), rng), w)
    g = rng.normal(size=20)
    flipped = apply_attack(w, AttackSpec(AttackKind.SIGN_FLIP_GRADIENT), rng, global_params=g)
    assert np.allclose(flipped - g, -(w - g))
    assert np.array_equal(apply_attack(w, AttackSpec(AttackKind.SCALED_NOISE, 0.0), rng), w)
    noisy = apply_attack(np.zeros(100_000), AttackSpec(AttackKind.SCALED_NOISE, 2.0), rng)
    assert abs(noisy.std() - 2.0) < 0.03


def test_manifest_rows_sorted():
    assert list(manifest_rows({2: [5, 1], 0: [3]})) == [(0, 3), (2, 5), (2, 1)]
