"""Dense IIC: pixel-pair joints over a window of displacements.

Label fields are [n, C, H, W] per-pixel cluster probabilities. The transformed
branch is pulled back into the original's coordinates with a bilinear
resampler, then one cross-correlation of the two fields yields the joint for
every displacement at once.
"""

from dataclasses import dataclass

import numpy as np

from . import info
from .engine import autograd as ag
from .engine.functional import bilinear_sample, conv2d
from .pairing import sampling_grid


@dataclass(frozen=True)
class DisplacementSet:
    d: int

    def __post_init__(self):
        if self.d < 0:
            raise ValueError(f"displacement radius must be >= 0, got {self.d}")

    @property
    def offsets(self):
        r = range(-self.d, self.d + 1)
        return [(a, b) for a in r for b in r]

    @property
    def side(self):
        return 2 * self.d + 1


def field_affine(point_map, image_shape, field_shape):
    """Rescale an image-space 3x3 point map to label-field pixel units (corner aligned)."""
    (Hi, Wi), (Hf, Wf) = image_shape, field_shape
    sr = (Hf - 1) / (Hi - 1) if Hi > 1 else 1.0
    sc = (Wf - 1) / (Wi - 1) if Wi > 1 else 1.0
    S = np.diag([sr, sc, 1.0])
    return S @ point_map @ np.linalg.inv(S)


def bilinear_resample(y, affines):
    """Resample each sample of ``y`` [n, C, H, W] through its 3x3 output->source affine.

    To undo a transform g on its label field, pass g's forward point map: the
    aligned value at u is read from g(u). Returns (node, validity mask [n, H, W]).
    """
    y = ag.const(y)
    n, _, H, W = y.shape
    affines = np.asarray(affines, dtype=np.float64)
    if affines.shape != (n, 3, 3):
        raise ValueError(f"need one 3x3 affine per sample, got {affines.shape}")
    rows = np.empty((n, H, W))
    cols = np.empty((n, H, W))
    for i, A in enumerate(affines):
        if abs(np.linalg.det(A[:2, :2])) < 1e-8:
            raise ValueError(f"affine for sample {i} is not invertible")
        rows[i], cols[i] = sampling_grid(A, (H, W))
    return bilinear_sample(y, rows, cols)


def align_to_original(yt, specs, image_shape):
    """Undo the geometric part of each sample's transform on the label field ``yt``."""
    yt = ag.const(yt)
    n, _, H, W = yt.shape
    if all(g is None or g.is_geometric_identity for g in specs):
        return yt, np.ones((n, H, W), dtype=bool)
    affines = np.stack([
        np.eye(3) if g is None else field_affine(g.point_map(), image_shape, (H, W)) for g in specs
    ])
    return bilinear_resample(yt, affines)


def seg_joint_conv(y, yt_aligned, T, mask=None, raw=False, clamp_eps=info.EPS64):
    """Joint for every displacement as a [C, C, 2d+1, 2d+1] node.

    Entry [c, c', tr+d, tc+d] accumulates y[i, c, u] * yt_aligned[i, c', u+t]
    over samples and pixels whose partner u+t is in frame and valid. With
    ``raw`` the plain sums are returned; otherwise each slice is symmetrized,
    normalized and clamped the same way as :func:`iic.info.joint_matrix`.
    """
    y, yt = ag.const(y), ag.const(yt_aligned)
    if y.shape != yt.shape:
        raise ValueError(f"label field shape mismatch: {y.shape} vs {yt.shape}")
    d = T.d
    y = ag.astype(y, np.float64)
    yt = ag.astype(yt, np.float64)
    if mask is not None:
        yt = yt * np.asarray(mask, dtype=np.float64)[:, None]
    # channels into the batch slot: y acts as C inputs, yt as C' kernels over n channels
    out = conv2d(ag.swapaxes(y, 0, 1), ag.swapaxes(yt, 0, 1), stride=1, padding=d)
    # conv offset (a, b) pairs u with u + (d - a, d - b); flip to index by t + d
    P = out[:, :, ::-1, ::-1]
    if raw:
        return P
    return normalize_slices(P, clamp_eps)


def normalize_slices(P, clamp_eps=info.EPS64):
    P = (P + ag.swapaxes(P, 0, 1)) * 0.5
    P = P / ag.sum_(P, axis=(0, 1), keepdims=True)
    return ag.clamp_min(P, clamp_eps)


def seg_loss(y, yt, specs, T, lam=1.0, average_mode="outside", image_shape=None,
             clamp_eps=info.EPS64):
    """Negative displacement-averaged I_lambda for a batch of paired label fields.

    ``outside`` averages information over displacements; ``inside`` computes
    information of the displacement-averaged joint.
    """
    if average_mode not in ("outside", "inside"):
        raise ValueError(f"average_mode must be 'outside' or 'inside', got {average_mode!r}")
    if lam < 1:
        raise ValueError(f"lambda must be >= 1, got {lam}")
    y, yt = ag.const(y), ag.const(yt)
    if image_shape is None:
        image_shape = y.shape[2:]
    aligned, mask = align_to_original(yt, specs, image_shape)
    P = seg_joint_conv(y, aligned, T, mask, raw=True)
    if average_mode == "outside":
        per_t = info.information_node(P, lam, clamp_eps)
        return -ag.mean(per_t)
    Pn = P / ag.sum_(P, axis=(0, 1), keepdims=True)
    return -info.information_node(ag.mean(Pn, axis=(2, 3)), lam, clamp_eps)


# ------------------------------------------------------------ brute-force path


def seg_joint_bruteforce(y, yt_aligned, d, mask=None):
    """Explicit loops over samples, pixels and displacements; raw sums [C, C, 2d+1, 2d+1]."""
    y = np.asarray(y, dtype=np.float64)
    yt = np.asarray(yt_aligned, dtype=np.float64)
    n, C, H, W = y.shape
    if mask is None:
        mask = np.ones((n, H, W), dtype=bool)
    P = np.zeros((C, C, 2 * d + 1, 2 * d + 1))
    for tr in range(-d, d + 1):
        for tc in range(-d, d + 1):
            for i in range(n):
                for r in range(H):
                    for c in range(W):
                        rr, cc = r + tr, c + tc
                        if 0 <= rr < H and 0 <= cc < W and mask[i, rr, cc]:
                            P[:, :, tr + d, tc + d] += np.outer(y[i, :, r, c], yt[i, :, rr, cc])
    return P


def seg_loss_reference(y, yt_aligned, d, lam=1.0, average_mode="outside", mask=None,
                       clamp_eps=info.EPS64):
    """Loss computed from the brute-force joints with the numpy info functions."""
    P = seg_joint_bruteforce(y, yt_aligned, d, mask)
    slices = []
    for a in range(P.shape[2]):
        for b in range(P.shape[3]):
            S = P[:, :, a, b]
            S = (S + S.T) / 2
            slices.append(S / S.sum())
    if average_mode == "outside":
        vals = [info.information_lambda(np.maximum(S, clamp_eps), lam) for S in slices]
        return -float(np.mean(vals))
    M = np.mean(slices, axis=0)
    M = (M + M.T) / 2
    return -info.information_lambda(np.maximum(M / M.sum(), clamp_eps), lam)
