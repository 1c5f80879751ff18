"""Heatmap colourings, occlusion snapshots and overlays (all uint8 RGB arrays)."""

import numpy as np

from .errors import InputError

__all__ = [
    "DIVERGING",
    "diverging_table",
    "quantize",
    "render_heatmap",
    "render_occlusion_series",
    "overlay",
    "PALETTES",
]

PALETTES = ("grayscale", "diverging")


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def diverging_table():
    """256-entry blue -> white -> red lookup.

    Entry ``i`` has ``t = i / 255``. Below 0.5 the colour is
    ``(s, s, 255)`` with ``s = round(255 * 2t)``; from 0.5 up it is
    ``(255, s, s)`` with ``s = round(255 * 2(1 - t))``. Entry 0 is pure blue,
    entry 255 pure red, and entries 127/128 are near white.
    """
    t = np.arange(256) / 255.0
    table = np.empty((256, 3), dtype=np.uint8)
    low = t < 0.5
    s_low = _round_half_up(255.0 * 2.0 * t).clip(0, 255)
    s_high = _round_half_up(255.0 * 2.0 * (1.0 - t)).clip(0, 255)
    table[low] = np.stack([s_low, s_low, np.full(256, 255.0)], axis=1)[low]
    table[~low] = np.stack([np.full(256, 255.0), s_high, s_high], axis=1)[~low]
    return table


DIVERGING = diverging_table()
DIVERGING.setflags(write=False)


def quantize(values):
    """Map [0, 1] values to table indices 0..255 (round half up)."""
    return _round_half_up(np.clip(values, 0.0, 1.0) * 255.0).astype(np.intp)


def _values(h):
    v = getattr(h, "values", h)
    return np.asarray(v, dtype=np.float64)


def render_heatmap(h, palette="grayscale"):
    """Colour a normalized heatmap; returns ``(H, W, 3)`` uint8."""
    idx = quantize(_values(h))
    if palette == "grayscale":
        g = idx.astype(np.uint8)
        return np.repeat(g[..., None], 3, axis=-1)
    if palette == "diverging":
        return DIVERGING[idx]
    raise InputError(f"unknown palette {palette!r}")


def render_occlusion_series(rgb, clusters, steps, mode="mask"):
    """Frames ``1..steps``; frame ``t`` blacks out the union of clusters ``1..t``.

    ``clusters`` is a :class:`~relevance_lens.selection.ClusterSelection` or a
    sequence of pixel-index arrays. Past the last cluster the frames repeat the
    fully occluded image. ``mode="square"`` blacks out the bounding box of the
    union instead of the pixels themselves.
    """
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w = rgb.shape[:2]
    if mode not in ("mask", "square"):
        raise InputError(f"unknown occlusion mode {mode!r}")
    groups = [getattr(c, "pixels", c) for c in getattr(clusters, "clusters", clusters)]
    erased = np.zeros(h * w, dtype=bool)
    frames = []
    for t in range(int(steps)):
        if t < len(groups):
            pix = np.asarray(groups[t], dtype=np.int64)
            if pix.size and (pix.min() < 0 or pix.max() >= h * w):
                raise InputError("cluster pixel index outside the image")
            erased[pix] = True
        frame = rgb.copy()
        if mode == "mask":
            frame.reshape(h * w, -1)[erased] = 0
        elif erased.any():
            rows, cols = np.nonzero(erased.reshape(h, w))
            frame[rows.min():rows.max() + 1, cols.min():cols.max() + 1] = 0
        frames.append(frame)
    return frames


def overlay(rgb, h, alpha=0.5):
    """Blend ``round((1 - a*v) * base + a*v * diverging(v))`` per channel."""
    base = np.asarray(rgb, dtype=np.uint8)
    v = _values(h)
    if base.shape[:2] != v.shape:
        raise InputError(f"heatmap {v.shape} and image {base.shape[:2]} sizes differ")
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise InputError("alpha must lie in [0, 1]")
    if alpha == 0.0:
        return base.copy()
    wgt = (alpha * np.clip(v, 0.0, 1.0))[..., None]
    pal = DIVERGING[quantize(v)].astype(np.float64)
    out = _round_half_up((1.0 - wgt) * base + wgt * pal)
    return out.clip(0, 255).astype(np.uint8)
