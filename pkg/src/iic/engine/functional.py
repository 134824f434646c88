"""Differentiable layer operations built on :mod:`iic.engine.autograd`."""

import numbers

import numpy as np

from .autograd import _accum, _make, const, transpose, reshape, matmul, add


def _pads(padding):
    if isinstance(padding, numbers.Integral):
        padding = int(padding)
        return (padding, padding, padding, padding)
    top, bottom, left, right = padding
    return (top, bottom, left, right)


def same_padding(size, kernel, stride):
    """(before, after) padding giving ceil(size / stride) outputs; extra goes after."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size, kernel, stride, pad_before, pad_after):
    span = size + pad_before + pad_after - kernel
    if span < 0 or span % stride:
        raise ValueError(
            f"non-integral conv output: size={size} kernel={kernel} stride={stride} "
            f"padding=({pad_before},{pad_after})"
        )
    return span // stride + 1


def conv2d(x, w, stride=1, padding=0):
    """Cross-correlation of ``x`` [n, c_in, H, W] with ``w`` [c_out, c_in, kh, kw].

    ``padding`` is an int or a (top, bottom, left, right) tuple of zero padding.
    """
    x, w = const(x), const(w)
    n, cin, H, W = x.value.shape
    cout, cin_w, kh, kw = w.value.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input has {cin}, kernel expects {cin_w}")
    pt, pb, pl, pr = _pads(padding)
    Ho = conv_output_size(H, kh, stride, pt, pb)
    Wo = conv_output_size(W, kw, stride, pl, pr)
    s = stride
    xp = np.pad(x.value, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x.value
    # cols[c, i, j, n, ho, wo] = xp[n, c, i + s*ho, j + s*wo]
    cols = np.empty((cin, kh, kw, n, Ho, Wo), dtype=x.value.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i : i + s * Ho : s, j : j + s * Wo : s]
    K = cin * kh * kw
    cols2 = cols.reshape(K, n * Ho * Wo)
    wm = w.value.reshape(cout, K)
    out = (wm @ cols2).reshape(cout, n, Ho, Wo).transpose(1, 0, 2, 3)

    def bw(g):
        gm = g.transpose(1, 0, 2, 3).reshape(cout, n * Ho * Wo)
        if w.requires_grad:
            _accum(w, (gm @ cols2.T).reshape(w.value.shape))
        if x.requires_grad:
            dcols = (wm.T @ gm).reshape(cin, kh, kw, n, Ho, Wo)
            dxp = np.zeros((cin, n) + xp.shape[2:], dtype=x.value.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += dcols[:, i, j]
            dxp = dxp.transpose(1, 0, 2, 3)
            _accum(x, dxp[:, :, pt : pt + H, pl : pl + W])

    return _make(np.ascontiguousarray(out), (x, w), "conv2d", bw)


def dense(x, weight, bias):
    """x @ weight + bias over the last axis; 4-D inputs are treated per pixel on axis 1."""
    x = const(x)
    if x.value.ndim == 4:
        n, c, H, W = x.value.shape
        flat = reshape(transpose(x, (0, 2, 3, 1)), (n * H * W, c))
        out = dense(flat, weight, bias)
        return transpose(reshape(out, (n, H, W, -1)), (0, 3, 1, 2))
    if x.value.shape[-1] != weight.value.shape[0]:
        raise ValueError(
            f"dense dimension mismatch: input {x.value.shape} vs weights {weight.value.shape}"
        )
    return add(matmul(x, weight), bias)


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, var_floor=1e-5):
    """Normalize over every axis except 1 (the channel axis).

    ``running_mean`` and ``running_var`` are updated in place in training mode.
    """
    x = const(x)
    axes = (0,) + tuple(range(2, x.value.ndim))
    shape = [1] * x.value.ndim
    shape[1] = x.value.shape[1]
    count = x.value.size // x.value.shape[1]
    if training:
        mu = x.value.mean(axis=axes, keepdims=True)
        xc = x.value - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        unbiased = var.reshape(-1) * (count / max(count - 1, 1))
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean.reshape(shape).astype(x.value.dtype)
        var = running_var.reshape(shape).astype(x.value.dtype)
        xc = x.value - mu
    inv = 1.0 / np.sqrt(var + np.asarray(var_floor, dtype=x.value.dtype))
    xhat = xc * inv
    g4 = gamma.value.reshape(shape)
    out = xhat * g4 + beta.value.reshape(shape)

    def bw(g):
        _accum(gamma, (g * xhat).sum(axis=axes))
        _accum(beta, g.sum(axis=axes))
        if not x.requires_grad:
            return
        gx = g * g4
        if training:
            gx = inv * (gx - gx.mean(axis=axes, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=axes, keepdims=True))
        else:
            gx = gx * inv
        _accum(x, gx)

    return _make(out, (x, gamma, beta), "batch_norm", bw)


def bilinear_sample(y, rows, cols):
    """Sample ``y`` [n, C, H, W] at fractional source coordinates.

    ``rows``/``cols`` are [n, H_out, W_out] arrays in pixel units. Returns the
    sampled node [n, C, H_out, W_out] and a boolean validity mask
    [n, H_out, W_out]; points outside the frame (beyond half a pixel of
    tolerance for rounding) are invalid and sample as zero.
    """
    y = const(y)
    n, C, H, W = y.value.shape
    tol = 1e-6
    valid = (rows >= -tol) & (rows <= H - 1 + tol) & (cols >= -tol) & (cols <= W - 1 + tol)
    r = np.clip(rows, 0, H - 1)
    c = np.clip(cols, 0, W - 1)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r0 = np.minimum(r0, H - 1)
    c0 = np.minimum(c0, W - 1)
    r1 = np.minimum(r0 + 1, H - 1)
    c1 = np.minimum(c0 + 1, W - 1)
    fr = (r - r0).astype(y.value.dtype)
    fc = (c - c0).astype(y.value.dtype)
    vm = valid.astype(y.value.dtype)
    corners = [
        (r0, c0, (1 - fr) * (1 - fc) * vm),
        (r0, c1, (1 - fr) * fc * vm),
        (r1, c0, fr * (1 - fc) * vm),
        (r1, c1, fr * fc * vm),
    ]
    bidx = np.arange(n)[:, None, None]
    # gather as [n, H_out, W_out, C]
    yv = y.value.transpose(0, 2, 3, 1)
    out = sum(yv[bidx, ri, ci] * wt[..., None] for ri, ci, wt in corners)

    def bw(g):
        gt = g.transpose(0, 2, 3, 1)
        full = np.zeros_like(yv)
        for ri, ci, wt in corners:
            np.add.at(full, (bidx, ri, ci), gt * wt[..., None])
        _accum(y, full.transpose(0, 3, 1, 2))

    return _make(np.ascontiguousarray(out.transpose(0, 3, 1, 2)), (y,), "bilinear_sample", bw), valid
