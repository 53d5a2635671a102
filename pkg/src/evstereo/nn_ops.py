"""Differentiable grid ops: convolution, normalization, sampling, correlation.

Convolution uses cross-correlation semantics (deep-learning convention) via
im2col + BLAS matmul. Bilinear samplers clamp coordinates to the sampled
canvas; the deformable convolution samples a zero-padded canvas so that zero
offsets reproduce plain conv2d bit-for-bit.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .autograd import Tensor, as_tensor, record


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _out_dim(size: int, k: int, s: int, p: int, d: int) -> int:
    eff = d * (k - 1) + 1
    out = (size + 2 * p - eff) // s + 1
    if out < 1:
        raise ValueError(
            f"kernel (k={k}, dilation={d}) does not fit input of size {size} "
            f"with padding {p}")
    return out


def _im2col(x_pad: np.ndarray, kh: int, kw: int, sh: int, sw: int,
            dh: int, dw: int, ho: int, wo: int) -> np.ndarray:
    """Gather conv patches into (B, C*kh*kw, ho*wo)."""
    b, c = x_pad.shape[:2]
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=x_pad.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x_pad[:, :,
                                     i * dh: i * dh + sh * ho: sh,
                                     j * dw: j * dw + sw * wo: sw]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _col2im(g_cols: np.ndarray, x_shape, kh, kw, sh, sw, dh, dw, ph, pw,
            ho, wo) -> np.ndarray:
    """Scatter-add patch gradients back to the (padded, then cropped) input."""
    b, c, h, w = x_shape
    g_pad = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=g_cols.dtype)
    g6 = g_cols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            g_pad[:, :,
                  i * dh: i * dh + sh * ho: sh,
                  j * dw: j * dw + sw * wo: sw] += g6[:, :, i, j]
    if ph or pw:
        return g_pad[:, :, ph: ph + h, pw: pw + w]
    return g_pad


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1) -> Tensor:
    """2-d cross-correlation: x [B,C,H,W] * weight [O,C,kh,kw] -> [B,O,H',W']."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input/weight, got {x.shape} and {weight.shape}")
    b, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if c != cw:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {cw}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({o},)")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    if sh < 1 or sw < 1 or dh < 1 or dw < 1:
        raise ValueError("conv2d stride and dilation must be >= 1")
    ho = _out_dim(h, kh, sh, ph, dh)
    wo = _out_dim(w, kw, sw, pw, dw)

    if ph or pw:
        x_pad = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
        x_pad[:, :, ph: ph + h, pw: pw + w] = x.data
    else:
        x_pad = x.data
    cols = _im2col(x_pad, kh, kw, sh, sw, dh, dw, ho, wo)
    w_mat = weight.data.reshape(o, c * kh * kw)
    out_data = np.matmul(w_mat, cols)  # (B, O, ho*wo)
    if bias is not None:
        out_data += bias.data[:, None]
    out = Tensor(out_data.reshape(b, o, ho, wo))

    def bw(g):
        g_mat = g.reshape(b, o, ho * wo)
        g_w = np.einsum("bol,bkl->ok", g_mat, cols).reshape(weight.shape)
        g_cols = np.matmul(w_mat.T, g_mat)
        g_x = _col2im(g_cols, x.shape, kh, kw, sh, sw, dh, dw, ph, pw, ho, wo)
        g_b = g_mat.sum(axis=(0, 2)) if bias is not None else None
        return g_x, g_w, g_b

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record(out, inputs, bw, "conv2d")


def batchnorm2d(x, gamma, beta, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool,
                momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (B, H, W).

    Train mode normalizes by batch statistics and updates the running stats
    in place by exponential moving average; eval mode uses the running stats.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ValueError(f"batchnorm2d expects 4-d input, got {x.shape}")
    b, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm2d parameter length must be {c}")

    if training:
        n = b * h * w
        if n < 2:
            raise ValueError("batchnorm2d train mode needs B*H*W >= 2")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        running_var *= (1.0 - momentum)
        running_var += momentum * var * n / (n - 1)
    else:
        mu = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mu[:, None, None]) * inv_std[:, None, None]
    out = Tensor(gamma.data[:, None, None] * x_hat + beta.data[:, None, None])

    def bw(g):
        g_gamma = (g * x_hat).sum(axis=(0, 2, 3))
        g_beta = g.sum(axis=(0, 2, 3))
        scale = (gamma.data * inv_std)[:, None, None]
        if training:
            n = b * h * w
            g_mean = g.mean(axis=(0, 2, 3))[:, None, None]
            gx_hat_mean = (g * x_hat).mean(axis=(0, 2, 3))[:, None, None]
            g_x = scale * (g - g_mean - x_hat * gx_hat_mean)
            del n
        else:
            g_x = scale * g
        return g_x, g_gamma, g_beta

    return record(out, (x, gamma, beta), bw, "batchnorm2d")


def maxpool2d(x, kernel: int = 2, stride: Optional[int] = None) -> Tensor:
    """Max pooling with square window; gradient routes to the argmax tap."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"maxpool2d expects 4-d input, got {x.shape}")
    k = int(kernel)
    s = k if stride is None else int(stride)
    b, c, h, w = x.shape
    ho = _out_dim(h, k, s, 0, 1)
    wo = _out_dim(w, k, s, 0, 1)
    patches = np.empty((b, c, k * k, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            patches[:, :, i * k + j] = x.data[:, :, i: i + s * ho: s,
                                              j: j + s * wo: s]
    arg = patches.argmax(axis=2)
    out = Tensor(np.take_along_axis(patches, arg[:, :, None], axis=2)[:, :, 0])

    def bw(g):
        g_patches = np.zeros_like(patches)
        np.put_along_axis(g_patches, arg[:, :, None], g[:, :, None], axis=2)
        g_x = np.zeros(x.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                g_x[:, :, i: i + s * ho: s, j: j + s * wo: s] += \
                    g_patches[:, :, i * k + j]
        return (g_x,)

    return record(out, (x,), bw, "maxpool2d")


_UPSAMPLE_MATRIX_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _upsample_matrix(size: int, factor: int) -> np.ndarray:
    """Dense (size*factor, size) bilinear interpolation matrix, half-pixel centers."""
    key = (size, factor)
    cached = _UPSAMPLE_MATRIX_CACHE.get(key)
    if cached is not None:
        return cached
    out_size = size * factor
    m = np.zeros((out_size, size), dtype=np.float64)
    for i in range(out_size):
        src = (i + 0.5) / factor - 0.5
        src = min(max(src, 0.0), size - 1.0)
        i0 = min(int(np.floor(src)), size - 2) if size > 1 else 0
        t = src - i0
        m[i, i0] += 1.0 - t
        m[i, min(i0 + 1, size - 1)] += t
    _UPSAMPLE_MATRIX_CACHE[key] = m
    return m


def bilinear_upsample(x, factor: int) -> Tensor:
    """Upsample [B,C,H,W] spatially by an integer factor (half-pixel centers)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"bilinear_upsample expects 4-d input, got {x.shape}")
    factor = int(factor)
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    if factor == 1:
        return record(Tensor(x.data.copy()), (x,), lambda g: (g,), "bilinear_upsample")
    b, c, h, w = x.shape
    a_h = _upsample_matrix(h, factor)
    a_w = _upsample_matrix(w, factor)
    tmp = np.einsum("Hh,bchw->bcHw", a_h, x.data, optimize=True)
    out = Tensor(np.matmul(tmp, a_w.T))

    def bw(g):
        g_tmp = np.matmul(g, a_w)
        return (np.einsum("Hh,bcHw->bchw", a_h, g_tmp, optimize=True),)

    return record(out, (x,), bw, "bilinear_upsample")


def deform_conv2d(x, offsets, weight, bias=None) -> Tensor:
    """3x3-style deformable convolution, stride 1, same padding.

    ``offsets`` holds a per-tap (dy, dx) pair per output pixel:
    channel 2t is the row offset and 2t+1 the column offset of tap t
    (row-major over the kernel). Taps sample the zero-padded input
    bilinearly, with coordinates clamped to the padded canvas, so zero
    offsets reduce exactly to conv2d with the same padding. Gradients flow
    to input, weight, bias, and offsets.
    """
    x, offsets, weight = as_tensor(x), as_tensor(offsets), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    b, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if c != cw:
        raise ValueError(f"deform_conv2d channel mismatch: {c} vs {cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("deform_conv2d requires odd kernel sizes")
    n_taps = kh * kw
    if offsets.shape != (b, 2 * n_taps, h, w):
        raise ValueError(
            f"offset tensor must be {(b, 2 * n_taps, h, w)}, got {offsets.shape}")
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, w + 2 * pw

    x_pad = np.zeros((b, c, hp, wp), dtype=x.dtype)
    x_pad[:, :, ph: ph + h, pw: pw + w] = x.data

    grid_y = np.arange(h, dtype=x.dtype)[:, None]
    grid_x = np.arange(w, dtype=x.dtype)[None, :]

    # Per-tap sampled values and the context needed for backward.
    sampled = np.empty((n_taps, b, c, h, w), dtype=x.dtype)
    ctx = []
    off = offsets.data
    for t in range(n_taps):
        i, j = divmod(t, kw)
        py = grid_y + i + off[:, 2 * t]       # padded-canvas coordinates
        px = grid_x + j + off[:, 2 * t + 1]
        in_y = (py > 0) & (py < hp - 1)       # clamp kills the derivative
        in_x = (px > 0) & (px < wp - 1)
        py = np.clip(py, 0.0, hp - 1.0)
        px = np.clip(px, 0.0, wp - 1.0)
        y0 = np.minimum(py.astype(np.int64), hp - 2)
        x0 = np.minimum(px.astype(np.int64), wp - 2)
        ty = (py - y0)[:, None]
        tx = (px - x0)[:, None]
        bi = np.arange(b)[:, None, None]
        # gather gives (B, H, W, C); move channels forward
        v00 = np.ascontiguousarray(x_pad[bi, :, y0, x0].transpose(0, 3, 1, 2))
        v01 = np.ascontiguousarray(x_pad[bi, :, y0, x0 + 1].transpose(0, 3, 1, 2))
        v10 = np.ascontiguousarray(x_pad[bi, :, y0 + 1, x0].transpose(0, 3, 1, 2))
        v11 = np.ascontiguousarray(x_pad[bi, :, y0 + 1, x0 + 1].transpose(0, 3, 1, 2))
        sampled[t] = ((1 - ty) * (1 - tx) * v00 + (1 - ty) * tx * v01 +
                      ty * (1 - tx) * v10 + ty * tx * v11)
        ctx.append((y0, x0, ty, tx, in_y, in_x, v00, v01, v10, v11))

    w_taps = weight.data.reshape(o, c, n_taps)
    out_data = np.einsum("tbchw,oct->bohw", sampled, w_taps, optimize=True)
    if bias is not None:
        out_data += bias.data[None, :, None, None]
    out = Tensor(out_data)

    def bw(g):
        g_w = np.einsum("bohw,tbchw->oct", g, sampled,
                        optimize=True).reshape(weight.shape)
        g_b = g.sum(axis=(0, 2, 3)) if bias is not None else None
        g_sampled = np.einsum("bohw,oct->tbchw", g, w_taps, optimize=True)
        g_pad = np.zeros_like(x_pad)
        g_off = np.zeros(offsets.shape, dtype=g.dtype)
        flat = g_pad.reshape(b, c, hp * wp)
        for t in range(n_taps):
            y0, x0, ty, tx, in_y, in_x, v00, v01, v10, v11 = ctx[t]
            gs = g_sampled[t]
            w00 = (1 - ty) * (1 - tx)
            w01 = (1 - ty) * tx
            w10 = ty * (1 - tx)
            w11 = ty * tx
            base = (y0 * wp + x0)[:, None]
            np.add.at(flat, (np.arange(b)[:, None, None, None],
                             np.arange(c)[None, :, None, None], base),
                      gs * w00)
            np.add.at(flat, (np.arange(b)[:, None, None, None],
                             np.arange(c)[None, :, None, None], base + 1),
                      gs * w01)
            np.add.at(flat, (np.arange(b)[:, None, None, None],
                             np.arange(c)[None, :, None, None], base + wp),
                      gs * w10)
            np.add.at(flat, (np.arange(b)[:, None, None, None],
                             np.arange(c)[None, :, None, None], base + wp + 1),
                      gs * w11)
            dv_dy = (1 - tx) * (v10 - v00) + tx * (v11 - v01)
            dv_dx = (1 - ty) * (v01 - v00) + ty * (v11 - v10)
            g_off[:, 2 * t] = (gs * dv_dy).sum(axis=1) * in_y
            g_off[:, 2 * t + 1] = (gs * dv_dx).sum(axis=1) * in_x
        g_x = g_pad[:, :, ph: ph + h, pw: pw + w]
        return g_x, g_off, g_w, g_b

    inputs = (x, offsets, weight, bias) if bias is not None else (x, offsets, weight)
    return record(out, inputs, bw, "deform_conv2d")


def grid_warp(x, disparity) -> tuple[Tensor, np.ndarray]:
    """Sample ``x`` at (h, w - disparity) with border clamping.

    Returns the warped tensor and a boolean validity mask (True where the
    source column landed inside the image). Differentiable w.r.t. both the
    input and the disparity.
    """
    x, disparity = as_tensor(x), as_tensor(disparity)
    if x.ndim != 4 or disparity.ndim != 4 or disparity.shape[1] != 1:
        raise ValueError(
            f"grid_warp expects x [B,C,H,W] and disparity [B,1,H,W], got "
            f"{x.shape} and {disparity.shape}")
    b, c, h, w = x.shape
    if disparity.shape[0] != b or disparity.shape[2:] != (h, w):
        raise ValueError(
            f"grid_warp spatial mismatch: {x.shape} vs {disparity.shape}")

    px = np.arange(w, dtype=x.dtype)[None, None, :] - disparity.data[:, 0]
    valid = (px >= 0.0) & (px <= w - 1.0)
    inside = (px > 0.0) & (px < w - 1.0)   # strict: clamp kills the derivative
    pxc = np.clip(px, 0.0, w - 1.0)
    x0 = np.minimum(pxc.astype(np.int64), w - 2) if w > 1 else np.zeros_like(pxc, dtype=np.int64)
    t = (pxc - x0)[:, None]
    idx0 = x0[:, None]
    v0 = np.take_along_axis(x.data, np.broadcast_to(idx0, x.shape), axis=3)
    v1 = np.take_along_axis(x.data, np.broadcast_to(idx0 + 1, x.shape), axis=3) \
        if w > 1 else v0
    out = Tensor((1 - t) * v0 + t * v1)

    def bw(g):
        g_x = np.zeros_like(x.data)
        flat = g_x.reshape(b, c, h * w)
        base = (np.arange(h)[None, :, None] * w + x0)[:, None]
        bi = np.arange(b)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(flat, (bi, ci, base), g * (1 - t))
        if w > 1:
            np.add.at(flat, (bi, ci, base + 1), g * t)
        g_disp = -((g * (v1 - v0)).sum(axis=1, keepdims=True)) * inside[:, None]
        return g_x, g_disp

    warped = record(out, (x, disparity), bw, "grid_warp")
    return warped, valid[:, None]


def correlate(left, right, d_count: int) -> tuple[Tensor, np.ndarray]:
    """Channel-mean dot-product correlation along candidate disparities.

    cost(b, d, h, w) = mean_c left(b,c,h,w) * right(b,c,h,w-d). Candidates
    whose source column falls left of the image contribute cost 0 and are
    marked False in the returned validity mask.
    """
    left, right = as_tensor(left), as_tensor(right)
    if left.shape != right.shape:
        raise ValueError(
            f"correlate expects identical shapes, got {left.shape} vs {right.shape}")
    if left.ndim != 4:
        raise ValueError(f"correlate expects 4-d features, got {left.shape}")
    if d_count < 1:
        raise ValueError("correlate needs at least one disparity candidate")
    b, c, h, w = left.shape
    vol = np.zeros((b, d_count, h, w), dtype=left.dtype)
    valid = np.zeros((b, d_count, h, w), dtype=bool)
    for d in range(d_count):
        if d >= w:
            break
        vol[:, d, :, d:] = np.einsum(
            "bchw,bchw->bhw", left.data[:, :, :, d:], right.data[:, :, :, : w - d],
            optimize=True) / c
        valid[:, d, :, d:] = True
    out = Tensor(vol)

    def bw(g):
        g_l = np.zeros_like(left.data)
        g_r = np.zeros_like(right.data)
        for d in range(min(d_count, w)):
            gd = g[:, d: d + 1, :, d:] / c
            g_l[:, :, :, d:] += gd * right.data[:, :, :, : w - d]
            g_r[:, :, :, : w - d] += gd * left.data[:, :, :, d:]
        return g_l, g_r

    return record(out, (left, right), bw, "correlate"), valid
