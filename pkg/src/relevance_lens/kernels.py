"""Hot numeric kernels.

Every kernel exists twice: a loop version compiled with numba (``*_nb``) and a
vectorised numpy version (``*_np``). The public name is bound to one of them at
import time according to :data:`relevance_lens._accel.NUMBA_ENABLED`. Both
variants are kept importable so tests and ``benchmarks/`` can compare them.

All arrays are float64, C-contiguous. Spatial tensors are ``(C, H, W)``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import NUMBA_ENABLED, njit

__all__ = [
    "backend",
    "conv2d_forward",
    "conv2d_backward_input",
    "maxpool_forward",
    "maxpool_backward",
    "meanshift_modes",
    "assign_nearest",
]


# --------------------------------------------------------------------------
# Conv2D (cross-correlation, no bias, input already padded)
# --------------------------------------------------------------------------


@njit
def conv2d_forward_nb(xp, w, stride):
    co, ci, kh, kw = w.shape
    hp, wp = xp.shape[1], xp.shape[2]
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    out = np.zeros((co, oh, ow))
    # weight loops outermost so the inner loop walks one output row
    for o in range(co):
        for c in range(ci):
            for a in range(kh):
                for b in range(kw):
                    wv = w[o, c, a, b]
                    for i in range(oh):
                        src = xp[c, i * stride + a]
                        dst = out[o, i]
                        if stride == 1:
                            for j in range(ow):
                                dst[j] += wv * src[j + b]
                        else:
                            for j in range(ow):
                                dst[j] += wv * src[j * stride + b]
    return out


def conv2d_forward_np(xp, w, stride):
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    return np.ascontiguousarray(np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4])))


@njit
def conv2d_backward_input_nb(g, w, stride, hp, wp):
    co, ci, kh, kw = w.shape
    oh, ow = g.shape[1], g.shape[2]
    dx = np.zeros((ci, hp, wp))
    for o in range(co):
        for c in range(ci):
            for a in range(kh):
                for b in range(kw):
                    wv = w[o, c, a, b]
                    if wv == 0.0:
                        continue
                    for i in range(oh):
                        src = g[o, i]
                        dst = dx[c, i * stride + a]
                        if stride == 1:
                            for j in range(ow):
                                dst[j + b] += wv * src[j]
                        else:
                            for j in range(ow):
                                dst[j * stride + b] += wv * src[j]
    return dx


def conv2d_backward_input_np(g, w, stride, hp, wp):
    ci, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    oh, ow = g.shape[1], g.shape[2]
    dx = np.zeros((ci, hp, wp))
    for a in range(kh):
        for b in range(kw):
            dx[:, a:a + stride * (oh - 1) + 1:stride, b:b + stride * (ow - 1) + 1:stride] += (
                np.tensordot(w[:, :, a, b], g, axes=([0], [0]))
            )
    return dx


# --------------------------------------------------------------------------
# MaxPool2D; argmax is a flat index into H*W, first row-major max wins
# --------------------------------------------------------------------------


@njit
def maxpool_forward_nb(x, ph, pw, stride):
    c_, h, w = x.shape
    oh = (h - ph) // stride + 1
    ow = (w - pw) // stride + 1
    out = np.empty((c_, oh, ow))
    arg = np.empty((c_, oh, ow), dtype=np.int64)
    for c in range(c_):
        for i in range(oh):
            for j in range(ow):
                r0 = i * stride
                c0 = j * stride
                best = x[c, r0, c0]
                bidx = r0 * w + c0
                for a in range(ph):
                    for b in range(pw):
                        v = x[c, r0 + a, c0 + b]
                        if v > best:
                            best = v
                            bidx = (r0 + a) * w + (c0 + b)
                out[c, i, j] = best
                arg[c, i, j] = bidx
    return out, arg


def maxpool_forward_np(x, ph, pw, stride):
    w = x.shape[2]
    win = sliding_window_view(x, (ph, pw), axis=(1, 2))[:, ::stride, ::stride]
    c_, oh, ow = win.shape[:3]
    flat = win.reshape(c_, oh, ow, ph * pw)
    k = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, k[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * stride + k // pw
    cols = np.arange(ow)[None, :] * stride + k % pw
    return np.ascontiguousarray(out), (rows * w + cols).astype(np.int64)


@njit
def maxpool_backward_nb(g, arg, h, w):
    c_, oh, ow = g.shape
    dx = np.zeros((c_, h * w))
    for c in range(c_):
        for i in range(oh):
            for j in range(ow):
                dx[c, arg[c, i, j]] += g[c, i, j]
    return dx.reshape((c_, h, w))


def maxpool_backward_np(g, arg, h, w):
    c_ = g.shape[0]
    dx = np.zeros((c_, h * w))
    rows = np.broadcast_to(np.arange(c_)[:, None, None], g.shape)
    np.add.at(dx, (rows.ravel(), arg.ravel()), g.ravel())
    return dx.reshape(c_, h, w)


# --------------------------------------------------------------------------
# 1-D flat-kernel mean shift over sorted values
# --------------------------------------------------------------------------


@njit
def meanshift_modes_nb(vals, prefix, seeds, bandwidth, tol, max_iter):
    modes = np.empty(seeds.shape[0])
    for s in range(seeds.shape[0]):
        m = seeds[s]
        for _ in range(max_iter):
            lo = np.searchsorted(vals, m - bandwidth, side="left")
            hi = np.searchsorted(vals, m + bandwidth, side="right")
            new = (prefix[hi] - prefix[lo]) / (hi - lo)
            shift = abs(new - m)
            m = new
            if shift < tol:
                break
        modes[s] = m
    return modes


def meanshift_modes_np(vals, prefix, seeds, bandwidth, tol, max_iter):
    modes = np.array(seeds, dtype=np.float64, copy=True)
    active = np.arange(modes.shape[0])
    for _ in range(max_iter):
        if active.size == 0:
            break
        m = modes[active]
        lo = np.searchsorted(vals, m - bandwidth, side="left")
        hi = np.searchsorted(vals, m + bandwidth, side="right")
        new = (prefix[hi] - prefix[lo]) / (hi - lo)
        modes[active] = new
        active = active[np.abs(new - m) >= tol]
    return modes


# --------------------------------------------------------------------------
# 1-D nearest-centre assignment; ties go to the lowest centre index
# --------------------------------------------------------------------------


@njit
def assign_nearest_nb(values, centers):
    n = values.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        best = abs(values[i] - centers[0])
        bi = 0
        for j in range(1, centers.shape[0]):
            d = abs(values[i] - centers[j])
            if d < best:
                best = d
                bi = j
        labels[i] = bi
        dist[i] = best
    return labels, dist


def assign_nearest_np(values, centers):
    d = np.abs(values[:, None] - centers[None, :])
    labels = np.argmin(d, axis=1).astype(np.int64)
    return labels, d[np.arange(values.shape[0]), labels]


if NUMBA_ENABLED:
    conv2d_forward = conv2d_forward_nb
    conv2d_backward_input = conv2d_backward_input_nb
    maxpool_forward = maxpool_forward_nb
    maxpool_backward = maxpool_backward_nb
    meanshift_modes = meanshift_modes_nb
    assign_nearest = assign_nearest_nb
else:
    conv2d_forward = conv2d_forward_np
    conv2d_backward_input = conv2d_backward_input_np
    maxpool_forward = maxpool_forward_np
    maxpool_backward = maxpool_backward_np
    meanshift_modes = meanshift_modes_np
    assign_nearest = assign_nearest_np


def backend():
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return "numba" if NUMBA_ENABLED else "numpy"
