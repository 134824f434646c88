"""Dataset ingestion, synthetic fixtures, splits and metrics export."""

import csv
import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .pairing import synth_gaussian_pairs

IDX_LABELS = 0x00000801
IDX_IMAGES = 0x00000803

# label raster colours, one row per class
PALETTE = np.array(
    [
        [230, 25, 75], [60, 180, 75], [0, 130, 200], [255, 225, 25],
        [145, 30, 180], [70, 240, 240], [245, 130, 48], [240, 50, 230],
        [210, 245, 60], [250, 190, 190], [0, 128, 128], [170, 110, 40],
        [128, 0, 0], [128, 128, 0], [0, 0, 128], [128, 128, 128],
    ],
    dtype=np.uint8,
)


class IdxFormatError(ValueError):
    pass


class PnmFormatError(ValueError):
    pass


@dataclass
class Dataset:
    kind: str  # "vectors" or "images"
    samples: np.ndarray
    labels: np.ndarray = None
    train_mask: np.ndarray = None
    eval_mask: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("vectors", "images"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.labels is not None and len(self.labels) != len(self.samples):
            raise ValueError("labels and samples differ in length")
        n = len(self.samples)
        if self.train_mask is None:
            self.train_mask = np.ones(n, dtype=bool)
        if self.eval_mask is None:
            self.eval_mask = np.ones(n, dtype=bool) if self.labels is not None else np.zeros(n, dtype=bool)

    def __len__(self):
        return len(self.samples)

    @property
    def train_indices(self):
        return np.flatnonzero(self.train_mask)

    @property
    def eval_indices(self):
        return np.flatnonzero(self.eval_mask)


# ---------------------------------------------------------------------- IDX


def _read_bytes(path):
    with open(path, "rb") as f:
        raw = f.read()
    if str(path).endswith(".gz"):
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise IdxFormatError(f"{path}: corrupt gzip stream ({e})") from None
    return raw


def parse_idx(raw, name="<bytes>"):
    """Parse an unsigned-byte IDX payload (labels or images) into a uint8 array."""
    if len(raw) < 4:
        raise IdxFormatError(f"{name}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_LABELS, IDX_IMAGES):
        raise IdxFormatError(f"{name}: bad magic 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(raw) < 4 + 4 * ndim:
        raise IdxFormatError(f"{name}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - 4 - 4 * ndim
    if payload < expected:
        raise IdxFormatError(f"{name}: truncated payload ({payload} of {expected} bytes)")
    if payload > expected:
        raise IdxFormatError(f"{name}: dims {dims} do not match payload of {payload} bytes")
    return np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim).reshape(dims)


def read_idx_array(path):
    return parse_idx(_read_bytes(path), str(path))


def read_idx(path, labels_path=None, limit=None):
    """Image IDX file (plus optional label file) -> Dataset of (n, 1, H, W) floats in [0, 1]."""
    images = read_idx_array(path)
    if images.ndim != 3:
        raise IdxFormatError(f"{path}: expected an image file (3 dims), got {images.ndim}")
    labels = None
    if labels_path is not None:
        labels = read_idx_array(labels_path)
        if labels.ndim != 1:
            raise IdxFormatError(f"{labels_path}: expected a label file (1 dim)")
        if len(labels) != len(images):
            raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    if limit is not None:
        images = images[:limit]
        labels = labels[:limit] if labels is not None else None
    samples = (images.astype(np.float32) / 255.0)[:, None]
    return Dataset("images", samples, None if labels is None else labels.astype(np.int64))


def find_mnist(directory):
    """Locate the MNIST training pair in ``directory`` (plain or gzipped)."""
    for suffix in ("", ".gz"):
        img = os.path.join(directory, "train-images-idx3-ubyte" + suffix)
        lbl = os.path.join(directory, "train-labels-idx1-ubyte" + suffix)
        if os.path.exists(img) and os.path.exists(lbl):
            return img, lbl
    # some mirrors use dots instead of dashes
    for suffix in ("", ".gz"):
        img = os.path.join(directory, "train-images.idx3-ubyte" + suffix)
        lbl = os.path.join(directory, "train-labels.idx1-ubyte" + suffix)
        if os.path.exists(img) and os.path.exists(lbl):
            return img, lbl
    raise FileNotFoundError(f"no MNIST training IDX files under {directory!r}")


def load_mnist(directory, limit=None):
    img, lbl = find_mnist(directory)
    return read_idx(img, lbl, limit)


# ---------------------------------------------------------------------- PNM


def _pnm_tokens(raw, count, name):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PnmFormatError(f"{name}: truncated header")
        tokens.append(raw[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pnm(path):
    """Binary P5 (H, W) or P6 (H, W, 3) image with maxval 255, as uint8."""
    with open(path, "rb") as f:
        raw = f.read()
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise PnmFormatError(f"{path}: unsupported magic {magic!r}")
    try:
        (w, h, maxval), pos = _pnm_tokens(raw[2:], 3, path)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as e:
        if isinstance(e, PnmFormatError):
            raise
        raise PnmFormatError(f"{path}: malformed header") from None
    if maxval != 255:
        raise PnmFormatError(f"{path}: maxval {maxval} unsupported (need 255)")
    channels = 3 if magic == b"P6" else 1
    data = raw[2 + pos :]
    if len(data) != w * h * channels:
        raise PnmFormatError(f"{path}: raster has {len(data)} bytes, expected {w * h * channels}")
    img = np.frombuffer(data, dtype=np.uint8)
    return img.reshape(h, w, 3) if channels == 3 else img.reshape(h, w)


def render_labels(labels, palette=PALETTE):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= len(palette):
        raise ValueError(f"label raster needs classes in [0, {len(palette)})")
    return palette[labels]


def write_pnm(path, image, palette=None):
    """Write uint8 (H, W) as P5 or (H, W, 3) as P6; with ``palette`` the input is a label raster."""
    image = np.asarray(image)
    if palette is not None:
        image = render_labels(image, np.asarray(palette, dtype=np.uint8))
    elif image.dtype != np.uint8:
        if image.dtype.kind == "f":
            image = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
        else:
            image = image.astype(np.uint8)
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write shape {image.shape} as PNM")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image).tobytes())


# -------------------------------------------------------------------- splits


def make_splits(dataset, protocol="unsupervised_full", train_frac=0.8, seed=0):
    """Tag samples train/eval.

    ``unsupervised_full`` trains on everything and evaluates on every labelled
    sample. ``separated`` makes a disjoint stratified split.
    """
    n = len(dataset)
    if protocol == "unsupervised_full":
        train = np.ones(n, dtype=bool)
        evals = np.ones(n, dtype=bool) if dataset.labels is not None else np.zeros(n, dtype=bool)
    elif protocol == "separated":
        if dataset.labels is None:
            raise ValueError("separated split needs labels")
        if not 0 < train_frac < 1:
            raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
        rng = np.random.default_rng(seed)
        labels = np.asarray(dataset.labels)
        flat = labels.reshape(n, -1)[:, 0] if labels.ndim > 1 else labels
        train = np.zeros(n, dtype=bool)
        for cls in np.unique(flat):
            members = np.flatnonzero(flat == cls)
            members = members[rng.permutation(len(members))]
            train[members[: int(round(train_frac * len(members)))]] = True
        evals = ~train
    else:
        raise ValueError(f"unknown split protocol {protocol!r}")
    return Dataset(dataset.kind, dataset.samples, dataset.labels, train, evals, dict(dataset.meta))


# ---------------------------------------------------------------- fixtures


GAUSS3_CENTERS = ((0.0, 0.0), (10.0, 0.0), (5.0, 8.660254037844386))


def gaussian_dataset(n_per_cluster=100, sigma=1.0, jitter=0.5, seed=0, centers=GAUSS3_CENTERS):
    rng = np.random.default_rng(seed)
    pairs = synth_gaussian_pairs(centers, sigma, jitter, n_per_cluster, rng)
    meta = {"jitter": jitter, "sigma": sigma, "centers": np.asarray(centers)}
    return Dataset("vectors", pairs.originals.astype(np.float32), pairs.labels, meta=meta)


def _texture(kind, size, rng):
    r, c = np.mgrid[0:size, 0:size]
    # 3-pixel bands: a period of 6 does not divide the 4-pixel output stride of
    # cnn-small, so texture phase cannot act as a spatially consistent cluster cue
    if kind == 0:  # horizontal stripes, period 6
        phase = rng.integers(0, 6)
        tex = 0.25 + 0.5 * (((r + phase) // 3) % 2)
        return tex + rng.normal(0, 0.03, tex.shape)
    if kind == 1:  # checkerboard, 3-pixel cells
        pr, pc = rng.integers(0, 6, size=2)
        tex = 0.25 + 0.5 * ((((r + pr) // 3) + ((c + pc) // 3)) % 2)
        return tex + rng.normal(0, 0.03, tex.shape)
    return rng.uniform(0.4, 0.9, (size, size))  # plain noise, brighter mean


def synth_texture_seg(n_images, size=64, n_classes=3, rng=None):
    """Images tiled by 2-4 blob regions, each filled with one of three textures."""
    if n_classes != 3:
        raise ValueError("the texture fixture has exactly 3 classes")
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    rng = np.random.default_rng(0) if rng is None else rng
    images = np.empty((n_images, 1, size, size), dtype=np.float32)
    masks = np.empty((n_images, size, size), dtype=np.int64)
    r, c = np.mgrid[0:size, 0:size].astype(np.float64)
    for i in range(n_images):
        m = int(rng.integers(2, 5))
        seeds = rng.uniform(0, size, size=(m, 2))
        # anisotropic, wavy distance gives blob-like rather than straight borders
        warp_r = 3.0 * np.sin(c / rng.uniform(6, 12) + rng.uniform(0, 2 * np.pi))
        warp_c = 3.0 * np.sin(r / rng.uniform(6, 12) + rng.uniform(0, 2 * np.pi))
        dist = ((r[None] + warp_r - seeds[:, 0, None, None]) ** 2
                + (c[None] + warp_c - seeds[:, 1, None, None]) ** 2)
        region = dist.argmin(axis=0)
        classes = rng.integers(0, 3, size=m)
        label = classes[region]
        img = np.zeros((size, size))
        for k in range(3):
            sel = label == k
            if sel.any():
                img[sel] = _texture(k, size, rng)[sel]
        images[i, 0] = np.clip(img, 0, 1)
        masks[i] = label
    return Dataset("images", images, masks, meta={"fixture": "textures"})


def patch_features(images, patch=7):
    """Per-pixel local statistics over a patch x patch window: mean, |d/dcol|, |d/drow|."""
    x = np.asarray(images, dtype=np.float64)[:, 0]
    dh = np.abs(np.diff(x, axis=2, append=x[:, :, -1:]))
    dv = np.abs(np.diff(x, axis=1, append=x[:, -1:, :]))
    feats = []
    for f in (x, dh, dv):
        p = patch // 2
        fp = np.pad(f, ((0, 0), (p, p), (p, p)), mode="reflect")
        cs = fp.cumsum(axis=1).cumsum(axis=2)
        cs = np.pad(cs, ((0, 0), (1, 0), (1, 0)))
        H, W = f.shape[1:]
        box = (cs[:, patch:patch + H, patch:patch + W] - cs[:, :H, patch:patch + W]
               - cs[:, patch:patch + H, :W] + cs[:, :H, :W])
        feats.append(box / patch**2)
    return np.stack(feats, axis=-1)


def texture_oracle_accuracy(dataset, patch=7):
    """Pixel accuracy of a nearest-class-centroid classifier on patch statistics."""
    feats = patch_features(dataset.samples, patch).reshape(-1, 3)
    labels = np.asarray(dataset.labels).ravel()
    mu, sd = feats.mean(axis=0), feats.std(axis=0) + 1e-12
    z = (feats - mu) / sd
    cents = np.stack([z[labels == k].mean(axis=0) for k in range(3)])
    pred = ((z[:, None, :] - cents[None]) ** 2).sum(-1).argmin(axis=1)
    return float(np.mean(pred == labels))


def sklearn_digits(size=24):
    """The 8x8 handwritten digits bundled with scikit-learn, upsampled to size x size.

    A local stand-in for exercising the image clustering path when MNIST
    files are not on disk.
    """
    from sklearn.datasets import load_digits

    from .pairing import sampling_grid
    from .engine.functional import bilinear_sample

    d = load_digits()
    imgs = (d.images / 16.0)[:, None].astype(np.float32)
    A = np.diag([7 / (size - 1), 7 / (size - 1), 1.0])
    rows, cols = sampling_grid(A, (size, size))
    n = len(imgs)
    up, _ = bilinear_sample(imgs, np.broadcast_to(rows, (n, size, size)), np.broadcast_to(cols, (n, size, size)))
    return Dataset("images", up.value.astype(np.float32), d.target.astype(np.int64), meta={"fixture": "digits"})


# ------------------------------------------------------------------ metrics


@dataclass
class MetricsRecord:
    epoch: int
    loss_main: float
    loss_aux: float
    acc_best: float
    acc_avg: float
    acc_std: float
    marginal_entropy_per_head: list
    # not written to the CSV
    subhead_acc: list = field(default_factory=list)
    best_subhead: int = 0
    min_marginal: list = field(default_factory=list)


def metrics_header(h):
    return ["epoch", "loss_main", "loss_aux", "acc_best", "acc_avg", "acc_std"] + [
        f"entropy_h{i}" for i in range(h)
    ]


class MetricsWriter:
    """Appends one CSV row per epoch and flushes immediately."""

    def __init__(self, path, h):
        self.path = path
        self._f = open(path, "w", newline="")
        self._w = csv.writer(self._f)
        self._w.writerow(metrics_header(h))
        self._f.flush()

    def append(self, rec):
        row = [rec.epoch, rec.loss_main, rec.loss_aux, rec.acc_best, rec.acc_avg, rec.acc_std]
        row += list(rec.marginal_entropy_per_head)
        self._w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        self._f.flush()

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return {key: np.array([float(r[key]) for r in rows]) for key in (rows[0] if rows else {})}
