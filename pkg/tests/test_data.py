import gzip
import struct

import numpy as np
import pytest

from smoothcert.data import (
    LabeledDataset,
    Toy2DConfig,
    export_csv,
    gen_toy2d,
    load_idx,
    read_idx,
    rotation_2d,
    train_test_split,
    write_idx,
)
from smoothcert.errors import ConfigError, FormatError, MismatchError


def idx_bytes(arr: np.ndarray) -> bytes:
    return struct.pack(">HBB", 0, 8, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()


@pytest.fixture
def fixture_pair(tmp_path):
    images = np.stack([np.zeros((28, 28), np.uint8), np.full((28, 28), 255, np.uint8)])
    labels = np.array([3, 7], np.uint8)
    (tmp_path / "img").write_bytes(idx_bytes(images))
    (tmp_path / "lab").write_bytes(idx_bytes(labels))
    return tmp_path / "img", tmp_path / "lab", images, labels


def test_header_magic_values(fixture_pair):
    img, lab, _, _ = fixture_pair
    assert img.read_bytes()[:4] == bytes.fromhex("00000803")
    assert lab.read_bytes()[:4] == bytes.fromhex("00000801")


def test_load_fixture_scales_pixels(fixture_pair):
    img, lab, _, _ = fixture_pair
    ds = load_idx(img, lab)
    assert ds.x.shape == (2, 784) and ds.num_classes == 10
    assert np.all(ds.x[0] == 0.0) and np.all(ds.x[1] == 1.0)
    np.testing.assert_array_equal(ds.y, [3, 7])


def test_write_read_round_trip_bytes(fixture_pair, tmp_path):
    img, _, images, _ = fixture_pair
    write_idx(tmp_path / "copy", images)
    assert (tmp_path / "copy").read_bytes() == img.read_bytes()
    write_idx(tmp_path / "copy.gz", images)
    with gzip.open(tmp_path / "copy.gz", "rb") as fh:
        assert fh.read() == img.read_bytes()
    np.testing.assert_array_equal(read_idx(tmp_path / "copy.gz"), images)


def test_gzip_output_is_reproducible(tmp_path):
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
    write_idx(tmp_path / "a.gz", arr)
    write_idx(tmp_path / "b.gz", arr)
    assert (tmp_path / "a.gz").read_bytes() == (tmp_path / "b.gz").read_bytes()


def test_bad_magic(tmp_path):
    (tmp_path / "bad").write_bytes(b"\x01\x02\x08\x01" + struct.pack(">I", 1) + b"\x00")
    with pytest.raises(FormatError):
        read_idx(tmp_path / "bad")
    (tmp_path / "float").write_bytes(b"\x00\x00\x0d\x01" + struct.pack(">I", 1) + b"\x00" * 4)
    with pytest.raises(FormatError):
        read_idx(tmp_path / "float")


def test_truncated_payload(fixture_pair, tmp_path):
    img, _, _, _ = fixture_pair
    (tmp_path / "short").write_bytes(img.read_bytes()[:-5])
    with pytest.raises(FormatError):
        read_idx(tmp_path / "short")
    (tmp_path / "tiny").write_bytes(b"\x00\x00")
    with pytest.raises(FormatError):
        read_idx(tmp_path / "tiny")
    (tmp_path / "hdr").write_bytes(b"\x00\x00\x08\x03\x00\x00")
    with pytest.raises(FormatError):
        read_idx(tmp_path / "hdr")


def test_count_mismatch(fixture_pair, tmp_path):
    img, _, _, _ = fixture_pair
    (tmp_path / "lab3").write_bytes(idx_bytes(np.array([1, 2, 3], np.uint8)))
    with pytest.raises(MismatchError):
        load_idx(img, tmp_path / "lab3")


def test_swapped_files_rejected(fixture_pair):
    img, lab, _, _ = fixture_pair
    with pytest.raises(FormatError):
        load_idx(lab, img)


def test_shipped_subset():
    ds = load_idx("data/mnist5k/t10k-images-idx3-ubyte.gz", "data/mnist5k/t10k-labels-idx1-ubyte.gz")
    assert (len(ds), ds.dim, ds.num_classes) == (500, 784, 10)
    assert 0.0 <= ds.x.min() and ds.x.max() <= 1.0
    assert set(np.unique(ds.y)) == set(range(10))


def test_toy_sizes_and_balance():
    ds = gen_toy2d(Toy2DConfig(num_per_class=100))
    assert len(ds) == 300 and ds.dim == 2
    np.testing.assert_array_equal(np.bincount(ds.y), [100, 100, 100])


def test_toy_means_near_centres():
    centers = ((-1.0, 0.0), (0.0, 0.0), (1.5, 0.0))
    n, spread = 400, 0.2
    ds = gen_toy2d(Toy2DConfig(num_per_class=n, class_centers=centers, spread=spread, elongation=1.0,
                               rotation_deg=0.0, seed=3))
    for k, c in enumerate(centers):
        assert np.all(np.abs(ds.x[ds.y == k].mean(axis=0) - c) <= 3 * spread / np.sqrt(n))


def test_toy_rotation_is_exact():
    base = gen_toy2d(Toy2DConfig(rotation_deg=0.0, seed=5))
    turned = gen_toy2d(Toy2DConfig(rotation_deg=90.0, seed=5))
    np.testing.assert_allclose(turned.x, base.x @ rotation_2d(90.0).T, atol=1e-12)
    np.testing.assert_array_equal(turned.y, base.y)


def test_toy_is_deterministic():
    a, b = gen_toy2d(Toy2DConfig(seed=1)), gen_toy2d(Toy2DConfig(seed=1))
    np.testing.assert_array_equal(a.x, b.x)


def test_toy_config_validation():
    with pytest.raises(ConfigError):
        Toy2DConfig(class_centers=((0, 0), (0, 0), (1, 1)))
    with pytest.raises(ConfigError):
        Toy2DConfig(spread=0.0)


def test_split_sizes_disjoint_and_exhaustive():
    ds = gen_toy2d(Toy2DConfig(num_per_class=100))
    tr, te = train_test_split(ds, 0.8, seed=2)
    assert (len(tr), len(te)) == (240, 60)
    rows = lambda d: {tuple(r) for r in d.x}  # noqa: E731
    assert not rows(tr) & rows(te)
    assert rows(tr) | rows(te) == rows(ds)
    tr2, _ = train_test_split(ds, 0.8, seed=2)
    np.testing.assert_array_equal(tr.x, tr2.x)
    with pytest.raises(ConfigError):
        train_test_split(ds, 1.0, 0)


def test_dataset_validation():
    with pytest.raises(ConfigError):
        LabeledDataset(np.zeros((2, 3)), np.array([0, 5]), 3)
    with pytest.raises(MismatchError):
        LabeledDataset(np.zeros((2, 3)), np.array([0]), 3)


def test_export_csv(tmp_path):
    ds = gen_toy2d(Toy2DConfig(num_per_class=2))
    export_csv(ds, tmp_path / "toy.csv")
    lines = (tmp_path / "toy.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,label" and len(lines) == 7
    assert float(lines[1].split(",")[0]) == ds.x[0, 0]
