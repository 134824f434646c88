"""Paired-sample generation: random image transforms, Sobel, batch repeats."""

from dataclasses import dataclass, field

import numpy as np

from .engine.autograd import const
from .engine.functional import bilinear_sample

LUMA = np.array([0.299, 0.587, 0.114])
SOBEL_H = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_V = SOBEL_H.T


@dataclass
class TransformPolicy:
    hflip: bool = True
    crop: bool = False
    crop_scale: tuple = (0.8, 1.0)  # side length as a fraction of the frame
    color: bool = True
    color_scale: tuple = (0.6, 1.4)
    color_shift: tuple = (-0.25, 0.25)
    rotate: bool = False
    rotation_deg: float = 25.0


@dataclass(frozen=True)
class TransformSpec:
    hflip: bool
    crop: tuple  # (row, col, height, width) inside the source frame
    color_scale: tuple
    color_shift: tuple
    rotation_deg: float
    frame: tuple  # (H, W) of the source image

    @classmethod
    def identity(cls, channels, frame):
        H, W = frame
        return cls(False, (0, 0, H, W), (1.0,) * channels, (0.0,) * channels, 0.0, (H, W))

    def point_map(self):
        """3x3 affine taking source pixel (row, col, 1) to its transformed location."""
        H, W = self.frame
        r0, c0, h, w = self.crop
        sr = (H - 1) / (h - 1) if h > 1 else 1.0
        sc = (W - 1) / (w - 1) if w > 1 else 1.0
        crop = np.array([[sr, 0, -r0 * sr], [0, sc, -c0 * sc], [0, 0, 1.0]])
        th = np.deg2rad(self.rotation_deg)
        cy, cx = (H - 1) / 2, (W - 1) / 2
        cos, sin = np.cos(th), np.sin(th)
        # counter-clockwise on screen: rows point down
        rot = np.array([[cos, -sin, 0], [sin, cos, 0], [0, 0, 1.0]])
        rot[:2, 2] = np.array([cy, cx]) - rot[:2, :2] @ np.array([cy, cx])
        flip = np.array([[1.0, 0, 0], [0, -1.0, W - 1], [0, 0, 1.0]]) if self.hflip else np.eye(3)
        return flip @ rot @ crop

    @property
    def is_geometric_identity(self):
        H, W = self.frame
        return not self.hflip and self.rotation_deg == 0 and tuple(self.crop) == (0, 0, H, W)

    @property
    def is_identity(self):
        return (
            self.is_geometric_identity
            and all(s == 1.0 for s in self.color_scale)
            and all(s == 0.0 for s in self.color_shift)
        )


@dataclass
class PairBatch:
    originals: np.ndarray
    transformed: np.ndarray
    specs: list
    source_indices: np.ndarray
    labels: np.ndarray = field(default=None)


def sample_transform(rng, policy, shape):
    """Draw one TransformSpec for a (c, H, W) image; disabled families give identity values."""
    c, H, W = shape
    hflip = bool(rng.random() < 0.5) if policy.hflip else False
    if policy.crop:
        frac = rng.uniform(*policy.crop_scale)
        h = max(2, min(H, int(round(frac * H))))
        w = max(2, min(W, int(round(frac * W))))
        crop = (int(rng.integers(0, H - h + 1)), int(rng.integers(0, W - w + 1)), h, w)
    else:
        crop = (0, 0, H, W)
    if policy.color:
        scale = tuple(float(v) for v in rng.uniform(*policy.color_scale, size=c))
        shift = tuple(float(v) for v in rng.uniform(*policy.color_shift, size=c))
    else:
        scale, shift = (1.0,) * c, (0.0,) * c
    rot = float(rng.uniform(-policy.rotation_deg, policy.rotation_deg)) if policy.rotate else 0.0
    return TransformSpec(hflip, crop, scale, shift, rot, (H, W))


def sampling_grid(affine, out_shape):
    """Source coordinates for every output pixel under a 3x3 output->source affine."""
    H, W = out_shape
    rr, cc = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    src = affine[:2, :2] @ np.stack([rr.ravel(), cc.ravel()]) + affine[:2, 2:3]
    return src[0].reshape(H, W), src[1].reshape(H, W)


def apply_transform(x, g):
    """Apply crop, rotation, flip and per-channel colour to a (c, H, W) image.

    The geometric part is one bilinear resample through the inverse of
    ``g.point_map()``; pixels mapped from outside the frame become 0.
    """
    x = np.asarray(x)
    c, H, W = x.shape
    if (H, W) != tuple(g.frame):
        raise ValueError(f"transform built for frame {g.frame}, image is {(H, W)}")
    r0, c0, h, w = g.crop
    if r0 < 0 or c0 < 0 or h < 1 or w < 1 or r0 + h > H or c0 + w > W:
        raise ValueError(f"crop {g.crop} outside a {H}x{W} frame")
    if len(g.color_scale) != c:
        raise ValueError(f"transform has {len(g.color_scale)} colour channels, image has {c}")
    if g.is_identity:
        return x.copy()
    out = x
    if not g.is_geometric_identity:
        if g.hflip and g.rotation_deg == 0 and tuple(g.crop) == (0, 0, H, W):
            out = x[:, :, ::-1].copy()
        else:
            rows, cols = sampling_grid(np.linalg.inv(g.point_map()), (H, W))
            sampled, _ = bilinear_sample(const(x[None]), rows[None], cols[None])
            out = sampled.value[0]
    scale = np.asarray(g.color_scale, dtype=x.dtype).reshape(c, 1, 1)
    shift = np.asarray(g.color_shift, dtype=x.dtype).reshape(c, 1, 1)
    return np.clip(out * scale + shift, 0.0, 1.0).astype(x.dtype)


def to_gray(x):
    x = np.asarray(x)
    if x.ndim == 2:
        return x
    if x.shape[0] == 1:
        return x[0]
    if x.shape[0] == 3:
        return np.tensordot(LUMA.astype(x.dtype), x, axes=1)
    raise ValueError(f"expected 1 or 3 channels, got {x.shape[0]}")


def sobel_preprocess(x):
    """(H, W) grayscale (or 1/3-channel) image -> (2, H, W) Sobel responses scaled by 1/8."""
    return sobel_batch(to_gray(x)[None, None])[0]


def sobel_batch(x):
    """Vectorized Sobel over an (n, c, H, W) batch; RGB is reduced to luma first."""
    x = np.asarray(x)
    if x.shape[1] == 3:
        x = np.tensordot(x, LUMA.astype(x.dtype), axes=([1], [0]))[:, None]
    elif x.shape[1] != 1:
        raise ValueError(f"Sobel expects 1 or 3 channels, got {x.shape[1]}")
    g = x[:, 0]
    H, W = g.shape[1:]
    p = np.pad(g, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    out = np.zeros((g.shape[0], 2, H, W), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            win = p[:, i : i + H, j : j + W]
            if SOBEL_H[i, j]:
                out[:, 0] += SOBEL_H[i, j] * win
            if SOBEL_V[i, j]:
                out[:, 1] += SOBEL_V[i, j] * win
    return out / np.asarray(8.0, dtype=x.dtype)


def center_crop(x, size):
    """Center crop the trailing two axes to ``size`` (no-op when already that size)."""
    if size is None:
        return x
    H, W = x.shape[-2:]
    if size > H or size > W:
        raise ValueError(f"crop size {size} exceeds image {H}x{W}")
    top, left = (H - size) // 2, (W - size) // 2
    return x[..., top : top + size, left : left + size]


def make_pair_batch(images, indices, r, policy, rng, crop_size=None):
    """Build r independently transformed copies of each selected image.

    Originals get the deterministic eval-style center crop; each repeat is
    paired with its own freshly drawn transform.
    """
    if len(indices) == 0:
        raise ValueError("empty index list")
    if r < 1:
        raise ValueError(f"repeat count r must be >= 1, got {r}")
    src = np.repeat(np.asarray(indices), r)
    originals = np.ascontiguousarray(center_crop(np.asarray(images)[src], crop_size))
    specs = [sample_transform(rng, policy, originals.shape[1:]) for _ in src]
    transformed = np.stack([apply_transform(x, g) for x, g in zip(originals, specs)])
    return PairBatch(originals, transformed, specs, src)


def jitter_pairs(points, indices, r, jitter, rng):
    """Vector analogue of make_pair_batch: the perturbation is additive Gaussian noise."""
    if len(indices) == 0:
        raise ValueError("empty index list")
    src = np.repeat(np.asarray(indices), r)
    x = np.asarray(points)[src]
    xt = x + rng.normal(0.0, jitter, size=x.shape).astype(x.dtype) if jitter > 0 else x.copy()
    return PairBatch(x, xt, [None] * len(src), src)


def _nearest_center(points, centers):
    d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    return d.argmin(axis=1)


def synth_gaussian_pairs(centers, sigma, jitter, n_per_cluster, rng):
    """Isotropic Gaussian blobs with jittered partners; labels kept for evaluation only."""
    centers = np.asarray(centers, dtype=np.float64)
    if len(centers) < 2:
        raise ValueError("need at least two centers")
    if sigma <= 0 or jitter < 0:
        raise ValueError("sigma must be > 0 and jitter >= 0")
    labels = np.repeat(np.arange(len(centers)), n_per_cluster)
    labels = labels[rng.permutation(len(labels))]
    x = centers[labels] + rng.normal(0.0, sigma, size=(len(labels), centers.shape[1]))
    xt = x + rng.normal(0.0, jitter, size=x.shape) if jitter > 0 else x.copy()
    gaps = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
    separation = gaps[~np.eye(len(centers), dtype=bool)].min()
    if separation >= 10 * sigma and jitter <= sigma:
        if np.any(_nearest_center(x, centers) != labels) or np.any(_nearest_center(xt, centers) != labels):
            raise RuntimeError("generated pair crossed a cluster boundary despite 10-sigma separation")
    return PairBatch(x, xt, [None] * len(labels), np.arange(len(labels)), labels)
