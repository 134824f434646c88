import gzip
import os
import struct

import numpy as np
import pytest

from iic import data
from iic.data import Dataset, IdxFormatError, PnmFormatError


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


# --------------------------------------------------------------------- IDX


def test_hand_built_idx_images(tmp_path):
    pixels = list(range(0, 18 * 10, 10))
    (tmp_path / "img").write_bytes(idx_bytes(0x803, (2, 3, 3), pixels))
    (tmp_path / "lbl").write_bytes(idx_bytes(0x801, (2,), [7, 1]))
    ds = data.read_idx(tmp_path / "img", tmp_path / "lbl")
    assert ds.samples.shape == (2, 1, 3, 3)
    np.testing.assert_allclose(ds.samples.ravel(), np.array(pixels) / 255, rtol=1e-6)
    np.testing.assert_array_equal(ds.labels, [7, 1])


def test_gzipped_idx(tmp_path):
    (tmp_path / "a.gz").write_bytes(gzip.compress(idx_bytes(0x801, (3,), [1, 2, 3])))
    np.testing.assert_array_equal(data.read_idx_array(tmp_path / "a.gz"), [1, 2, 3])
    (tmp_path / "b.gz").write_bytes(b"not gzip at all")
    with pytest.raises(IdxFormatError):
        data.read_idx_array(tmp_path / "b.gz")


@pytest.mark.parametrize("raw, message", [
    (idx_bytes(0x802, (2,), [0, 0]), "bad magic"),
    (b"\x00\x00", "truncated header"),
    (struct.pack(">I", 0x803) + b"\x00\x00\x00\x02", "truncated header"),
    (idx_bytes(0x801, (5,), [1, 2]), "truncated payload"),
    (idx_bytes(0x801, (2,), [1, 2, 3]), "do not match"),
])
def test_idx_errors(raw, message):
    with pytest.raises(IdxFormatError, match=message):
        data.parse_idx(raw)


def test_idx_fuzzed_headers_raise_typed_errors():
    rng = np.random.default_rng(0)
    good = idx_bytes(0x803, (2, 3, 3), range(18))
    for _ in range(300):
        raw = bytearray(good)
        for pos in rng.integers(0, 16, size=rng.integers(1, 4)):
            raw[pos] = int(rng.integers(0, 256))
        raw = bytes(raw[: int(rng.integers(0, len(raw) + 1))]) if rng.random() < 0.3 else bytes(raw)
        try:
            arr = data.parse_idx(raw)
        except IdxFormatError:
            continue
        # anything accepted must be self-consistent
        assert arr.size == len(raw) - 4 - 4 * arr.ndim


def test_label_image_count_mismatch(tmp_path):
    (tmp_path / "img").write_bytes(idx_bytes(0x803, (2, 1, 1), [0, 0]))
    (tmp_path / "lbl").write_bytes(idx_bytes(0x801, (3,), [0, 0, 0]))
    with pytest.raises(IdxFormatError):
        data.read_idx(tmp_path / "img", tmp_path / "lbl")
    with pytest.raises(IdxFormatError):
        data.read_idx(tmp_path / "lbl")


MNIST_DIR = os.environ.get("IIC_MNIST_DIR", "")


@pytest.mark.skipif(not MNIST_DIR or not os.path.isdir(MNIST_DIR), reason="set IIC_MNIST_DIR to the official MNIST files")
def test_official_mnist_train_file():
    ds = data.load_mnist(MNIST_DIR)
    assert ds.samples.shape == (60000, 1, 28, 28)
    assert ds.labels[0] == 5


def test_find_mnist_names(tmp_path):
    (tmp_path / "train-images-idx3-ubyte.gz").write_bytes(b"")
    (tmp_path / "train-labels-idx1-ubyte.gz").write_bytes(b"")
    img, lbl = data.find_mnist(tmp_path)
    assert img.endswith("train-images-idx3-ubyte.gz")
    with pytest.raises(FileNotFoundError):
        data.find_mnist(tmp_path / "nowhere")


# --------------------------------------------------------------------- PNM


def test_black_p5(tmp_path):
    (tmp_path / "b.pgm").write_bytes(b"P5\n2 2\n255\n" + bytes(4))
    img = data.read_pnm(tmp_path / "b.pgm")
    assert img.shape == (2, 2) and not img.any()


def test_pnm_round_trips(tmp_path):
    rng = np.random.default_rng(1)
    rgb = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    gray = rng.integers(0, 256, (4, 3), dtype=np.uint8)
    data.write_pnm(tmp_path / "c.ppm", rgb)
    data.write_pnm(tmp_path / "g.pgm", gray)
    assert data.read_pnm(tmp_path / "c.ppm").tobytes() == rgb.tobytes()
    assert data.read_pnm(tmp_path / "g.pgm").tobytes() == gray.tobytes()


def test_pnm_header_comments(tmp_path):
    (tmp_path / "x.pgm").write_bytes(b"P5 # made by hand\n1 # width\n2\n255\n\x07\x08")
    np.testing.assert_array_equal(data.read_pnm(tmp_path / "x.pgm"), [[7], [8]])


def test_label_raster_palette(tmp_path):
    labels = np.array([[0, 1], [2, 1]])
    data.write_pnm(tmp_path / "l.ppm", labels, palette=data.PALETTE)
    img = data.read_pnm(tmp_path / "l.ppm")
    assert len({tuple(p) for p in img.reshape(-1, 3)}) == 3
    np.testing.assert_array_equal(img[0, 1], data.PALETTE[1])


@pytest.mark.parametrize("raw", [b"P3\n1 1\n255\n0 0 0", b"P5\n1 1\n65535\n\x00\x00", b"P5\n2 2\n255\n\x00",
                                 b"P6\n1\n", b"P5\nx 1\n255\n\x00"])
def test_pnm_errors(tmp_path, raw):
    (tmp_path / "bad").write_bytes(raw)
    with pytest.raises(PnmFormatError):
        data.read_pnm(tmp_path / "bad")


# ------------------------------------------------------------------ splits


def test_unsupervised_full_split():
    ds = Dataset("vectors", np.zeros((100, 2)), np.arange(100) % 2)
    s = data.make_splits(ds, "unsupervised_full")
    assert s.train_mask.sum() == 100 and s.eval_mask.sum() == 100


def test_separated_split_is_stratified_and_reproducible():
    ds = Dataset("vectors", np.zeros((100, 2)), np.arange(100) % 2)
    s = data.make_splits(ds, "separated", 0.8, seed=3)
    assert s.train_mask.sum() == 80 and s.eval_mask.sum() == 20
    assert not np.any(s.train_mask & s.eval_mask)
    for cls in (0, 1):
        assert s.train_mask[ds.labels == cls].sum() == 40
        assert s.eval_mask[ds.labels == cls].sum() == 10
    t = data.make_splits(ds, "separated", 0.8, seed=3)
    np.testing.assert_array_equal(s.train_mask, t.train_mask)


def test_split_errors():
    with pytest.raises(ValueError):
        data.make_splits(Dataset("vectors", np.zeros((4, 2))), "separated")
    ds = Dataset("vectors", np.zeros((4, 2)), np.zeros(4, dtype=int))
    with pytest.raises(ValueError):
        data.make_splits(ds, "separated", 1.0)
    with pytest.raises(ValueError):
        data.make_splits(ds, "leave_one_out")


# ---------------------------------------------------------------- fixtures


def test_texture_fixture_reproducible_and_labelled():
    a = data.synth_texture_seg(4, 32, rng=np.random.default_rng(5))
    b = data.synth_texture_seg(4, 32, rng=np.random.default_rng(5))
    assert a.samples.tobytes() == b.samples.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)
    assert set(np.unique(a.labels)) <= {0, 1, 2}
    assert a.samples.shape == (4, 1, 32, 32) and a.labels.shape == (4, 32, 32)
    assert a.samples.min() >= 0 and a.samples.max() <= 1


def test_texture_fixture_is_learnable():
    ds = data.synth_texture_seg(200, 64, rng=np.random.default_rng(0))
    assert data.texture_oracle_accuracy(ds) >= 0.95


def test_texture_fixture_argument_checks():
    with pytest.raises(ValueError):
        data.synth_texture_seg(2, 16)
    with pytest.raises(ValueError):
        data.synth_texture_seg(2, 32, n_classes=4)


def test_gaussian_dataset():
    ds = data.gaussian_dataset(50, seed=1)
    assert ds.kind == "vectors" and ds.samples.shape == (150, 2)
    assert np.bincount(ds.labels).tolist() == [50, 50, 50]


# ----------------------------------------------------------------- metrics


def test_metrics_writer_round_trip(tmp_path):
    path = tmp_path / "m.csv"
    with data.MetricsWriter(path, 2) as w:
        w.append(data.MetricsRecord(0, -0.5, 0.0, 0.9, 0.8, 0.1, [1.0, 0.9]))
        w.append(data.MetricsRecord(1, -0.75, -1.25, 1.0, 0.95, 0.05, [1.09, 1.0986]))
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss_main,loss_aux,acc_best,acc_avg,acc_std,entropy_h0,entropy_h1"
    m = data.read_metrics(path)
    np.testing.assert_array_equal(m["loss_aux"], [0.0, -1.25])
    assert m["entropy_h1"][1] == 1.0986
