"""Small constructed models and datasets with known ground truth.

``planted_model`` builds a classifier whose "malignant" logit is a fixed
positive-weighted sum of raw pixels, so the relevant pixels are known exactly.
``random_model`` draws small random architectures for property tests and
benchmarks.
"""

from pathlib import Path

import numpy as np

from .io import ManifestRow, raw_to_rgb, save_mask, save_png, write_manifest
from .nn.layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU
from .nn.model import Model
from .nn.modelfile import save_model

__all__ = [
    "planted_model",
    "patch_weight_map",
    "level_weight_map",
    "planted_image",
    "random_model",
    "write_synthetic_dataset",
]


def patch_weight_map(height, width, patch, rng=None, low=0.5, high=1.0):
    """Weight map that is positive on ``patch = (row, col, size)`` and zero elsewhere."""
    r0, c0, k = patch
    wmap = np.zeros((height, width))
    if rng is None:
        wmap[r0:r0 + k, c0:c0 + k] = 1.0
    else:
        wmap[r0:r0 + k, c0:c0 + k] = rng.uniform(low, high, size=(k, k))
    return wmap


def level_weight_map(height, width, levels=10):
    """Weights taking ``levels`` values ``k / (levels - 1)``, k = 0..levels-1, in row bands.

    Adjacent levels are more than 0.1 apart when ``levels <= 10``, so an
    auto-bandwidth mean shift separates every level.
    """
    band = np.minimum(np.arange(height) * levels // height, levels - 1)
    return np.repeat((band / (levels - 1))[:, None], width, axis=1).astype(np.float64)


def planted_model(weight_map, channels=1, threshold=None):
    """Conv(1x1 channel mean) -> ReLU -> Flatten -> Dense(2).

    Logit 1 ("malignant") is ``sum(weight_map * mean_c(raw))``; logit 0 is the
    constant ``threshold`` (default: a quarter of the all-white response).
    """
    wmap = np.asarray(weight_map, dtype=np.float64)
    h, w = wmap.shape
    if threshold is None:
        threshold = 0.25 * float(wmap.sum())
    conv = Conv2D(np.full((1, channels, 1, 1), 1.0 / channels), np.zeros(1))
    dense = Dense(np.stack([np.zeros(h * w), wmap.ravel()]), np.array([threshold, 0.0]))
    return Model(
        [conv, ReLU(), Flatten(), dense],
        (channels, h, w),
        np.zeros(channels),
        np.ones(channels),
        ["benign", "malignant"],
    )


def planted_image(rng, weight_map, channels=1, signal=True, background=(0.05, 0.3), fg=(0.6, 1.0)):
    """Raw image: dim random background, bright where ``weight_map > 0`` if ``signal``."""
    h, w = np.shape(weight_map)
    img = rng.uniform(*background, size=(channels, h, w))
    if signal:
        on = np.asarray(weight_map) > 0
        img[:, on] = rng.uniform(*fg, size=(channels, int(on.sum())))
    # 8-bit representable so PNG round trips are exact
    return np.floor(img * 255.0 + 0.5) / 255.0


def _weights(rng, shape, fan_in, positive):
    if positive:
        return rng.uniform(0.1, 1.0, size=shape)
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


_TEMPLATES = (
    ("conv", "relu", "pool", "flatten", "dense"),
    ("conv", "relu", "flatten", "dense"),
    ("conv", "relu", "conv", "flatten", "dense"),
    ("conv", "pool", "flatten", "dense"),
    ("flatten", "dense", "relu", "dense"),
    ("flatten", "dense"),
)


def random_model(rng, bias=True, positive=False, max_hw=8, max_channels=2, n_classes=None,
                 templates=_TEMPLATES):
    """Random CNN with at most five layers and input at most ``max_channels x max_hw x max_hw``.

    ``positive=True`` draws all weights from U(0.1, 1) so that every
    pre-activation is positive on positive inputs.
    """
    c = int(rng.integers(1, max_channels + 1))
    h = int(rng.integers(3, max_hw + 1))
    w = int(rng.integers(3, max_hw + 1))
    n_classes = n_classes or int(rng.integers(2, 4))
    tpl = templates[int(rng.integers(len(templates)))]
    layers, shape = [], (c, h, w)
    for i, kind in enumerate(tpl):
        if kind == "conv":
            kh = int(rng.integers(1, min(3, shape[1]) + 1))
            kw = int(rng.integers(1, min(3, shape[2]) + 1))
            co = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            padding = "same" if rng.random() < 0.5 else "valid"
            wts = _weights(rng, (co, shape[0], kh, kw), shape[0] * kh * kw, positive)
            b = _weights(rng, (co,), 4, positive) * 0.1 if bias else np.zeros(co)
            layer = Conv2D(wts, b, stride=stride, padding=padding)
        elif kind == "pool":
            ph = int(rng.integers(1, min(2, shape[1]) + 1))
            pw = int(rng.integers(1, min(2, shape[2]) + 1))
            layer = MaxPool2D((ph, pw), int(rng.integers(1, 3)))
        elif kind == "relu":
            layer = ReLU()
        elif kind == "flatten":
            layer = Flatten()
        else:
            last = i == len(tpl) - 1
            out = n_classes if last else int(rng.integers(2, 6))
            wts = _weights(rng, (out, shape[0]), shape[0], positive)
            b = _weights(rng, (out,), 4, positive) * 0.1 if bias else np.zeros(out)
            layer = Dense(wts, b)
        layers.append(layer)
        shape = layer.output_shape(shape)
    return Model(layers, (c, h, w), np.zeros(c), np.ones(c), [f"class{k}" for k in range(n_classes)])


def write_synthetic_dataset(out_dir, n_images=10, seed=0, size=20, channels=3, levels=9):
    """Write a planted model, ``n_images`` PNGs, masks and a manifest under ``out_dir``.

    The model's weight map is zero outside a central patch and takes
    ``levels`` values spaced more than 0.1 apart (normalized) inside it, so the
    malignant logit depends only on the patch and gradient heatmaps split into
    ``levels + 1`` well separated value groups. Half the images
    carry the bright signal (label 1). Each image gets an annotation mask
    marking the patch red and a ring around it orange.

    Returns ``(model_path, manifest_path)``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    r0 = size // 4
    k = size // 2
    wmap = np.zeros((size, size))
    wmap[r0:r0 + k, r0:r0 + k] = 0.15 + 0.85 * level_weight_map(k, k, levels)
    model = planted_model(wmap, channels)
    model_path = out / "planted.rlns"
    save_model(model, model_path)

    mask = np.zeros((size, size), dtype=np.uint8)
    mask[max(r0 - 1, 0):r0 + k + 1, max(r0 - 1, 0):r0 + k + 1] = 2
    mask[r0:r0 + k, r0:r0 + k] = 3
    save_mask(mask, out / "mask.png")
    rows = []
    mags = (40, 100, 200, 400)
    for i in range(n_images):
        label = i % 2
        raw = planted_image(rng, wmap, channels, signal=bool(label))
        name = f"img{i:03d}"
        save_png(raw_to_rgb(raw), out / f"{name}.png")
        rows.append(ManifestRow(name, f"{name}.png", label, mags[i % 4], "mask.png"))
    manifest_path = out / "manifest.csv"
    write_manifest(rows, manifest_path)
    return model_path, manifest_path
