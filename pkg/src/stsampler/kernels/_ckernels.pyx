# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot array kernels.

Same contract as numpy_backend: float32/float64 in and out, float64
accumulators, pixel-center resampling with border clamping.
"""

import numpy as np

cimport cython
from libc.math cimport floor
from libc.stdint cimport int64_t

ctypedef fused floating:
    float
    double


def conv2d_forward(x, w, int stride, int pad):
    return _conv2d_forward(
        np.ascontiguousarray(x), np.ascontiguousarray(w), stride, pad,
        np.zeros(_conv_out_shape(x.shape, w.shape, stride, pad), dtype=x.dtype))


def _conv_out_shape(xs, ws, int stride, int pad):
    oh = (xs[2] + 2 * pad - ws[2]) // stride + 1
    ow = (xs[3] + 2 * pad - ws[3]) // stride + 1
    return (xs[0], ws[0], oh, ow)


def _conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                    int stride, int pad, floating[:, :, :, ::1] out):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = out.shape[2], ow = out.shape[3]
    cdef Py_ssize_t b, o, c, i, j, ki, kj, yy, xx
    cdef double acc
    with nogil:
        for b in range(n):
            for o in range(co):
                for i in range(oh):
                    for j in range(ow):
                        acc = 0.0
                        for c in range(ci):
                            for ki in range(kh):
                                yy = stride * i + ki - pad
                                if yy < 0 or yy >= h:
                                    continue
                                for kj in range(kw):
                                    xx = stride * j + kj - pad
                                    if xx < 0 or xx >= wd:
                                        continue
                                    acc += <double>x[b, c, yy, xx] * <double>w[o, c, ki, kj]
                        out[b, o, i, j] = <floating>acc
    return np.asarray(out)


def conv2d_backward_input(g, w, int stride, int pad, int in_h, int in_w):
    dx64 = np.zeros((g.shape[0], w.shape[1], in_h, in_w), dtype=np.float64)
    _conv2d_backward_input(np.ascontiguousarray(g), np.ascontiguousarray(w),
                           stride, pad, dx64)
    return dx64.astype(g.dtype)


def _conv2d_backward_input(floating[:, :, :, ::1] g, floating[:, :, :, ::1] w,
                           int stride, int pad, double[:, :, :, ::1] dx):
    cdef Py_ssize_t n = g.shape[0], co = g.shape[1], oh = g.shape[2], ow = g.shape[3]
    cdef Py_ssize_t ci = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t h = dx.shape[2], wd = dx.shape[3]
    cdef Py_ssize_t b, o, c, i, j, ki, kj, yy, xx
    cdef double gv
    with nogil:
        for b in range(n):
            for o in range(co):
                for i in range(oh):
                    for j in range(ow):
                        gv = <double>g[b, o, i, j]
                        for c in range(ci):
                            for ki in range(kh):
                                yy = stride * i + ki - pad
                                if yy < 0 or yy >= h:
                                    continue
                                for kj in range(kw):
                                    xx = stride * j + kj - pad
                                    if xx < 0 or xx >= wd:
                                        continue
                                    dx[b, c, yy, xx] += gv * <double>w[o, c, ki, kj]
    return None


def conv2d_backward_weight(g, x, int stride, int pad, int kh, int kw):
    dw = np.zeros((g.shape[1], x.shape[1], kh, kw), dtype=g.dtype)
    dw64 = np.zeros((g.shape[1], x.shape[1], kh, kw), dtype=np.float64)
    _conv2d_backward_weight(np.ascontiguousarray(g), np.ascontiguousarray(x),
                            stride, pad, dw64)
    return dw64.astype(g.dtype)


def _conv2d_backward_weight(floating[:, :, :, ::1] g, floating[:, :, :, ::1] x,
                            int stride, int pad, double[:, :, :, ::1] dw):
    cdef Py_ssize_t n = g.shape[0], co = g.shape[1], oh = g.shape[2], ow = g.shape[3]
    cdef Py_ssize_t ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t kh = dw.shape[2], kw = dw.shape[3]
    cdef Py_ssize_t b, o, c, i, j, ki, kj, yy, xx
    cdef double gv
    with nogil:
        for b in range(n):
            for o in range(co):
                for i in range(oh):
                    for j in range(ow):
                        gv = <double>g[b, o, i, j]
                        for c in range(ci):
                            for ki in range(kh):
                                yy = stride * i + ki - pad
                                if yy < 0 or yy >= h:
                                    continue
                                for kj in range(kw):
                                    xx = stride * j + kj - pad
                                    if xx < 0 or xx >= wd:
                                        continue
                                    dw[o, c, ki, kj] += gv * <double>x[b, c, yy, xx]
    return np.asarray(dw)


cdef inline void _axis_neighbors(double src, Py_ssize_t size,
                                 Py_ssize_t *i0, Py_ssize_t *i1, double *frac) nogil:
    cdef double f = floor(src)
    frac[0] = src - f
    i0[0] = <Py_ssize_t>f
    i1[0] = i0[0] + 1
    if i0[0] < 0:
        i0[0] = 0
    elif i0[0] > size - 1:
        i0[0] = size - 1
    if i1[0] < 0:
        i1[0] = 0
    elif i1[0] > size - 1:
        i1[0] = size - 1


def resize_forward(x, int out_h, int out_w):
    out = np.zeros((x.shape[0], x.shape[1], out_h, out_w), dtype=x.dtype)
    return _resize_forward(np.ascontiguousarray(x), out)


def _resize_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] out):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = out.shape[2], ow = out.shape[3]
    cdef double sy = (<double>h) / (<double>oh)
    cdef double sx = (<double>w) / (<double>ow)
    cdef Py_ssize_t b, ch, i, j, y0, y1, x0, x1
    cdef double fy, fx, top, bot
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    _axis_neighbors((i + 0.5) * sy - 0.5, h, &y0, &y1, &fy)
                    for j in range(ow):
                        _axis_neighbors((j + 0.5) * sx - 0.5, w, &x0, &x1, &fx)
                        top = <double>x[b, ch, y0, x0] * (1 - fx) + <double>x[b, ch, y0, x1] * fx
                        bot = <double>x[b, ch, y1, x0] * (1 - fx) + <double>x[b, ch, y1, x1] * fx
                        out[b, ch, i, j] = <floating>(top * (1 - fy) + bot * fy)
    return np.asarray(out)


def resize_backward(g, int in_h, int in_w):
    dx64 = np.zeros((g.shape[0], g.shape[1], in_h, in_w), dtype=np.float64)
    _resize_backward(np.ascontiguousarray(g), dx64)
    return dx64.astype(g.dtype)


def _resize_backward(floating[:, :, :, ::1] g, double[:, :, :, ::1] dx):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], oh = g.shape[2], ow = g.shape[3]
    cdef Py_ssize_t h = dx.shape[2], w = dx.shape[3]
    cdef double sy = (<double>h) / (<double>oh)
    cdef double sx = (<double>w) / (<double>ow)
    cdef Py_ssize_t b, ch, i, j, y0, y1, x0, x1
    cdef double fy, fx, gv
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    _axis_neighbors((i + 0.5) * sy - 0.5, h, &y0, &y1, &fy)
                    for j in range(ow):
                        _axis_neighbors((j + 0.5) * sx - 0.5, w, &x0, &x1, &fx)
                        gv = <double>g[b, ch, i, j]
                        dx[b, ch, y0, x0] += gv * (1 - fy) * (1 - fx)
                        dx[b, ch, y0, x1] += gv * (1 - fy) * fx
                        dx[b, ch, y1, x0] += gv * fy * (1 - fx)
                        dx[b, ch, y1, x1] += gv * fy * fx
    return None


def warp_forward(x, ys, xs):
    out = np.zeros((x.shape[0], x.shape[1], ys.shape[1], xs.shape[1]), dtype=x.dtype)
    return _warp_forward(np.ascontiguousarray(x),
                         np.ascontiguousarray(ys, dtype=np.float64),
                         np.ascontiguousarray(xs, dtype=np.float64), out)


def _warp_forward(floating[:, :, :, ::1] x, double[:, ::1] ys, double[:, ::1] xs,
                  floating[:, :, :, ::1] out):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = ys.shape[1], ow = xs.shape[1]
    cdef Py_ssize_t b, ch, i, j, y0, y1, x0, x1
    cdef double fy, fx, top, bot
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    _axis_neighbors(ys[b, i], h, &y0, &y1, &fy)
                    for j in range(ow):
                        _axis_neighbors(xs[b, j], w, &x0, &x1, &fx)
                        top = <double>x[b, ch, y0, x0] * (1 - fx) + <double>x[b, ch, y0, x1] * fx
                        bot = <double>x[b, ch, y1, x0] * (1 - fx) + <double>x[b, ch, y1, x1] * fx
                        out[b, ch, i, j] = <floating>(top * (1 - fy) + bot * fy)
    return np.asarray(out)


def warp_backward(x, ys, xs, g):
    dx64 = np.zeros(x.shape, dtype=np.float64)
    dys64 = np.zeros(ys.shape, dtype=np.float64)
    dxs64 = np.zeros(xs.shape, dtype=np.float64)
    _warp_backward(np.ascontiguousarray(x),
                   np.ascontiguousarray(ys, dtype=np.float64),
                   np.ascontiguousarray(xs, dtype=np.float64),
                   np.ascontiguousarray(g), dx64, dys64, dxs64)
    return dx64.astype(x.dtype), dys64.astype(ys.dtype), dxs64.astype(xs.dtype)


def _warp_backward(floating[:, :, :, ::1] x, double[:, ::1] ys, double[:, ::1] xs,
                   floating[:, :, :, ::1] g, double[:, :, :, ::1] dx,
                   double[:, ::1] dys, double[:, ::1] dxs):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = ys.shape[1], ow = xs.shape[1]
    cdef Py_ssize_t b, ch, i, j, y0, y1, x0, x1
    cdef double fy, fx, gv, v00, v01, v10, v11
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    _axis_neighbors(ys[b, i], h, &y0, &y1, &fy)
                    for j in range(ow):
                        _axis_neighbors(xs[b, j], w, &x0, &x1, &fx)
                        gv = <double>g[b, ch, i, j]
                        v00 = <double>x[b, ch, y0, x0]
                        v01 = <double>x[b, ch, y0, x1]
                        v10 = <double>x[b, ch, y1, x0]
                        v11 = <double>x[b, ch, y1, x1]
                        dx[b, ch, y0, x0] += gv * (1 - fy) * (1 - fx)
                        dx[b, ch, y0, x1] += gv * (1 - fy) * fx
                        dx[b, ch, y1, x0] += gv * fy * (1 - fx)
                        dx[b, ch, y1, x1] += gv * fy * fx
                        dxs[b, j] += gv * ((v01 - v00) * (1 - fy) + (v11 - v10) * fy)
                        dys[b, i] += gv * ((v10 - v00) * (1 - fx) + (v11 - v01) * fx)
    return None


def topk_sample(scores, z, double sigma, int t):
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1]
    if m > 64:
        from . import numpy_backend
        return numpy_backend.topk_sample(scores, z, sigma, t)
    pert = np.ascontiguousarray(scores, dtype=np.float64)[None, :] \
        + sigma * np.ascontiguousarray(z, dtype=np.float64)
    idx = np.zeros((n, t), dtype=np.int64)
    counts = np.zeros((m, t), dtype=np.int64)
    _topk_collect(pert, idx, counts, t)
    return counts / float(n), idx


def _topk_collect(double[:, ::1] pert, int64_t[:, ::1] idx,
                  int64_t[:, ::1] counts, int t):
    cdef Py_ssize_t n = pert.shape[0], m = pert.shape[1]
    cdef Py_ssize_t k, i, j, cnt, best
    cdef double thresh, bestv
    # selection by repeated max; fine for the small m used here
    cdef Py_ssize_t[64] chosen
    cdef unsigned char[64] used
    with nogil:
        for k in range(n):
            for i in range(m):
                used[i] = 0
            for cnt in range(t):
                best = -1
                bestv = 0.0
                for i in range(m):
                    if used[i]:
                        continue
                    if best < 0 or pert[k, i] > bestv:
                        best = i
                        bestv = pert[k, i]
                used[best] = 1
                chosen[cnt] = best
            # chosen holds top-t indices; sort ascending (insertion, t small)
            for i in range(1, t):
                best = chosen[i]
                j = i
                while j > 0 and chosen[j - 1] > best:
                    chosen[j] = chosen[j - 1]
                    j -= 1
                chosen[j] = best
            for cnt in range(t):
                idx[k, cnt] = chosen[cnt]
                counts[chosen[cnt], cnt] += 1
    return None


def topk_backward(idx, z, double sigma, upstream):
    n = idx.shape[0]
    grad = np.zeros(z.shape[1], dtype=np.float64)
    _topk_backward(np.ascontiguousarray(idx, dtype=np.int64),
                   np.ascontiguousarray(z, dtype=np.float64),
                   sigma, np.ascontiguousarray(upstream, dtype=np.float64), grad)
    return grad


def _topk_backward(int64_t[:, ::1] idx, double[:, ::1] z, double sigma,
                   double[:, ::1] upstream, double[::1] grad):
    cdef Py_ssize_t n = idx.shape[0], t = idx.shape[1], m = z.shape[1]
    cdef Py_ssize_t k, j, i
    cdef double dot, scale = 1.0 / (n * sigma)
    with nogil:
        for k in range(n):
            dot = 0.0
            for j in range(t):
                dot += upstream[idx[k, j], j]
            for i in range(m):
                grad[i] += dot * z[k, i] * scale
    return None
