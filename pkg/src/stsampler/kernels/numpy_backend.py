"""Vectorized numpy implementations of the hot array kernels.

This is the fallback backend used when the compiled extension is not
available.  Both backends share the same contract:

* inputs/outputs are C-contiguous float32 or float64 ndarrays,
* reductions accumulate in float64 and are rounded back to the input dtype,
* results are deterministic for identical inputs.

Conventions baked in here and relied on everywhere else:

* resampling uses pixel-center alignment: output index i samples the
  source at (i + 0.5) * scale - 0.5,
* out-of-range sample coordinates are border-clamped,
* perturbed top-k returns column t of the selection matrix for the frame
  holding the (t+1)-th smallest selected index (temporal order).
"""

from __future__ import annotations

import numpy as np


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N,Ci,H,W) -> contiguous (N*oh*ow, Ci*kh*kw) patch matrix."""
    n, ci, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]            # N,Ci,oh,ow,kh,kw
    win = win.transpose(0, 2, 3, 1, 4, 5)                # N,oh,ow,Ci,kh,kw
    return np.ascontiguousarray(win.reshape(n * oh * ow, ci * kh * kw))


def conv2d_forward_cols(x: np.ndarray, w: np.ndarray, stride: int, pad: int):
    """conv2d_forward that also returns the patch matrix for reuse in backward."""
    n, ci, h, wd = x.shape
    co, ci_w, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, pad)
    y = cols @ np.ascontiguousarray(w.reshape(co, ci * kh * kw).T)
    return np.ascontiguousarray(y.reshape(n, oh, ow, co).transpose(0, 3, 1, 2)), cols


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Cross-correlate x (N,Ci,H,W) with w (Co,Ci,kh,kw) via im2col + GEMM.

    Accumulation happens in the input dtype (BLAS); gradient-check paths
    run the whole pipeline in float64, where this is 64-bit exact.
    """
    return conv2d_forward_cols(x, w, stride, pad)[0]


def conv2d_backward_input(g: np.ndarray, w: np.ndarray, stride: int, pad: int,
                          in_h: int, in_w: int) -> np.ndarray:
    """Gradient of conv2d w.r.t. its input (GEMM + col2im scatter).

    The scatter runs channels-last so the per-tap blocks stay contiguous.
    """
    n, co, oh, ow = g.shape
    co_w, ci, kh, kw = w.shape
    gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1).reshape(n * oh * ow, co))
    dcols = (gmat @ w.reshape(co, ci * kh * kw)).reshape(n, oh, ow, ci, kh, kw)
    dxp = np.zeros((n, in_h + 2 * pad, in_w + 2 * pad, ci), dtype=g.dtype)
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride, :] += \
                dcols[:, :, :, :, ki, kj]
    if pad:
        dxp = dxp[:, pad:pad + in_h, pad:pad + in_w, :]
    return np.ascontiguousarray(dxp.transpose(0, 3, 1, 2))


def conv2d_backward_weight_cols(g: np.ndarray, cols: np.ndarray,
                                ci: int, kh: int, kw: int) -> np.ndarray:
    """Filter gradient from a cached patch matrix (single GEMM)."""
    n, co, oh, ow = g.shape
    gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1).reshape(n * oh * ow, co))
    dw = gmat.T @ cols
    return np.ascontiguousarray(dw.reshape(co, ci, kh, kw))


def conv2d_backward_weight(g: np.ndarray, x: np.ndarray, stride: int, pad: int,
                           kh: int, kw: int) -> np.ndarray:
    """Gradient of conv2d w.r.t. its filter bank (single GEMM)."""
    cols = _im2col(x, kh, kw, stride, pad)               # (N*oh*ow, Ci*kh*kw)
    return conv2d_backward_weight_cols(g, cols, x.shape[1], kh, kw)


def _resize_axis_weights(out_size: int, in_size: int):
    """Source neighbors and weights for 1-D pixel-center bilinear resize."""
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i1 = np.clip(i0 + 1, 0, in_size - 1)
    i0 = np.clip(i0, 0, in_size - 1)
    return i0, i1, frac


def resize_forward(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of x (N,C,H,W), pixel-center aligned, border clamped."""
    n, c, h, w = x.shape
    y0, y1, fy = _resize_axis_weights(out_h, h)
    x0, x1, fx = _resize_axis_weights(out_w, w)
    x64 = x.astype(np.float64)
    top = x64[:, :, y0][:, :, :, x0] * (1 - fx) + x64[:, :, y0][:, :, :, x1] * fx
    bot = x64[:, :, y1][:, :, :, x0] * (1 - fx) + x64[:, :, y1][:, :, :, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return np.ascontiguousarray(out.astype(x.dtype))


def resize_backward(g: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Scatter resize_forward's interpolation weights back onto the input."""
    n, c, oh, ow = g.shape
    y0, y1, fy = _resize_axis_weights(oh, in_h)
    x0, x1, fx = _resize_axis_weights(ow, in_w)
    g64 = g.astype(np.float64)
    dx = np.zeros((n, c, in_h, in_w), dtype=np.float64)
    yy0 = np.repeat(y0, ow)
    yy1 = np.repeat(y1, ow)
    xx0 = np.tile(x0, oh)
    xx1 = np.tile(x1, oh)
    wy = np.repeat(fy, ow)
    wx = np.tile(fx, oh)
    gflat = g64.reshape(n, c, oh * ow)
    for (yi, xi, wgt) in (
        (yy0, xx0, (1 - wy) * (1 - wx)),
        (yy0, xx1, (1 - wy) * wx),
        (yy1, xx0, wy * (1 - wx)),
        (yy1, xx1, wy * wx),
    ):
        np.add.at(dx, (slice(None), slice(None), yi, xi), gflat * wgt)
    return np.ascontiguousarray(dx.astype(g.dtype))


def warp_forward(x: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample x (N,C,H,W) on the separable grid ys (N,Ho) x xs (N,Wo).

    Output pixel (i,j) of item n is the bilinear sample of x[n] at row
    coordinate ys[n,i] and column coordinate xs[n,j], border clamped.
    """
    n, c, h, w = x.shape
    ho = ys.shape[1]
    wo = xs.shape[1]
    x64 = x.astype(np.float64)
    out = np.empty((n, c, ho, wo), dtype=np.float64)
    for k in range(n):
        yk = ys[k].astype(np.float64)
        xk = xs[k].astype(np.float64)
        y0 = np.floor(yk).astype(np.int64)
        fy = yk - y0
        y1 = np.clip(y0 + 1, 0, h - 1)
        y0 = np.clip(y0, 0, h - 1)
        x0 = np.floor(xk).astype(np.int64)
        fx = xk - x0
        x1 = np.clip(x0 + 1, 0, w - 1)
        x0 = np.clip(x0, 0, w - 1)
        img = x64[k]
        top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
        bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
        out[k] = top * (1 - fy)[:, None] + bot * fy[:, None]
    return np.ascontiguousarray(out.astype(x.dtype))


def warp_backward(x: np.ndarray, ys: np.ndarray, xs: np.ndarray, g: np.ndarray):
    """Gradients of warp_forward w.r.t. (x, ys, xs)."""
    n, c, h, w = x.shape
    ho = ys.shape[1]
    wo = xs.shape[1]
    x64 = x.astype(np.float64)
    g64 = g.astype(np.float64)
    dx = np.zeros((n, c, h, w), dtype=np.float64)
    dys = np.zeros((n, ho), dtype=np.float64)
    dxs = np.zeros((n, wo), dtype=np.float64)
    for k in range(n):
        yk = ys[k].astype(np.float64)
        xk = xs[k].astype(np.float64)
        y0r = np.floor(yk).astype(np.int64)
        fy = yk - y0r
        y1 = np.clip(y0r + 1, 0, h - 1)
        y0 = np.clip(y0r, 0, h - 1)
        x0r = np.floor(xk).astype(np.int64)
        fx = xk - x0r
        x1 = np.clip(x0r + 1, 0, w - 1)
        x0 = np.clip(x0r, 0, w - 1)
        img = x64[k]
        gk = g64[k]  # C,Ho,Wo
        wy0 = (1 - fy)[:, None]
        wy1 = fy[:, None]
        wx0 = (1 - fx)[None, :]
        wx1 = fx[None, :]
        for (yi, xi, wgt) in (
            (y0, x0, wy0 * wx0),
            (y0, x1, wy0 * wx1),
            (y1, x0, wy1 * wx0),
            (y1, x1, wy1 * wx1),
        ):
            np.add.at(dx[k], (slice(None), yi[:, None].repeat(wo, 1), xi[None, :].repeat(ho, 0)),
                      gk * wgt[None])
        # coordinate gradients: clamped neighbors collapse the difference to 0
        v00 = img[:, y0][:, :, x0]
        v01 = img[:, y0][:, :, x1]
        v10 = img[:, y1][:, :, x0]
        v11 = img[:, y1][:, :, x1]
        dgdx = (v01 - v00) * wy0[None] + (v11 - v10) * wy1[None]
        dgdy = (v10 - v00) * wx0[None] + (v11 - v01) * wx1[None]
        dxs[k] = np.einsum("cij,cij->j", gk, dgdx)
        dys[k] = np.einsum("cij,cij->i", gk, dgdy)
    return (np.ascontiguousarray(dx.astype(x.dtype)),
            np.ascontiguousarray(dys.astype(ys.dtype)),
            np.ascontiguousarray(dxs.astype(xs.dtype)))


def topk_sample(scores: np.ndarray, z: np.ndarray, sigma: float, t: int):
    """Monte-Carlo smoothed top-k selection.

    Runs hard top-k on scores + sigma * z[k] for every noise row and
    averages the one-hot selection matrices.  Column order follows the
    ascending sorted selected indices of each draw.

    Returns (mean matrix (M,t) float64, sorted indices (n,t) int64).
    """
    n, m = z.shape
    pert = scores[None, :].astype(np.float64) + sigma * z.astype(np.float64)
    if t < m:
        idx = np.argpartition(-pert, t - 1, axis=1)[:, :t]
    else:
        idx = np.tile(np.arange(m), (n, 1))
    idx = np.sort(idx, axis=1).astype(np.int64)
    counts = np.zeros((m, t), dtype=np.int64)
    np.add.at(counts, (idx, np.broadcast_to(np.arange(t), idx.shape)), 1)
    return counts / float(n), idx


def topk_backward(idx: np.ndarray, z: np.ndarray, sigma: float,
                  upstream: np.ndarray) -> np.ndarray:
    """Score gradient of topk_sample via the stored perturbations.

    grad[m] = (1 / (n * sigma)) * sum_k <I_k, upstream> * z[k, m]
    """
    n, t = idx.shape
    dots = upstream.astype(np.float64)[idx, np.arange(t)[None, :]].sum(axis=1)
    return (dots @ z.astype(np.float64)) / (n * sigma)
