"""File I/O: PNG images, heatmap PGM + sidecar JSON, annotation masks, dataset manifests.

RGB images are handled as ``uint8`` arrays of shape ``(H, W, 3)``; raw model
images as float64 ``(C, H, W)`` arrays in [0, 1].
"""

import csv
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .attribution import Heatmap
from .errors import FormatError, InputError

__all__ = [
    "load_image",
    "save_png",
    "to_raw",
    "to_tensor",
    "raw_to_rgb",
    "write_heatmap",
    "read_heatmap",
    "heatmap_to_pgm_bytes",
    "sidecar_path",
    "load_mask",
    "save_mask",
    "MASK_LEVELS",
    "ManifestRow",
    "read_manifest",
    "write_manifest",
    "parse_breakhis_name",
    "manifest_from_breakhis_dir",
    "MAGNIFICATIONS",
]

MAGNIFICATIONS = (40, 100, 200, 400)
MASK_LEVELS = (0, 1, 2, 3)


# --------------------------------------------------------------------------
# images
# --------------------------------------------------------------------------


def load_image(path):
    """Read an image file as an ``(H, W, 3)`` uint8 RGB array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from None


def save_png(rgb, path):
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path, format="PNG")


def to_raw(rgb, channels, size=None, resize=False):
    """Scale an RGB array to a raw ``(channels, H, W)`` float tensor in [0, 1].

    ``size`` is the expected ``(H, W)``; a mismatch is an error unless
    ``resize`` is set, in which case the image is resampled bilinearly.
    Single-channel models receive the PIL "L" luma conversion.
    """
    rgb = np.asarray(rgb, dtype=np.uint8)
    if size is not None and rgb.shape[:2] != tuple(size):
        if not resize:
            raise InputError(
                f"image is {rgb.shape[0]}x{rgb.shape[1]} but the model expects "
                f"{size[0]}x{size[1]} (pass --resize to resample)"
            )
        rgb = np.asarray(Image.fromarray(rgb).resize((size[1], size[0]), Image.BILINEAR))
    if channels == 3:
        arr = rgb.transpose(2, 0, 1)
    elif channels == 1:
        arr = np.asarray(Image.fromarray(rgb).convert("L"))[None]
    else:
        raise InputError(f"unsupported channel count {channels} for RGB input")
    return arr.astype(np.float64) / 255.0


def to_tensor(rgb, model, resize=False):
    """RGB array to a preprocessed network input for ``model``."""
    c, h, w = model.input_shape
    return model.preprocess(to_raw(rgb, c, (h, w), resize))


def raw_to_rgb(raw):
    """Inverse of :func:`to_raw` for 1- or 3-channel tensors."""
    q = np.floor(np.asarray(raw) * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    if q.shape[0] == 1:
        q = np.repeat(q, 3, axis=0)
    return np.ascontiguousarray(q.transpose(1, 2, 0))


# --------------------------------------------------------------------------
# heatmaps: 16-bit binary PGM + JSON sidecar
# --------------------------------------------------------------------------


def sidecar_path(pgm_path):
    return Path(pgm_path).with_suffix(".json")


def heatmap_to_pgm_bytes(h):
    if not h.normalized:
        raise InputError("only normalized heatmaps can be written as PGM")
    q = np.floor(h.values * 65535.0 + 0.5).clip(0, 65535).astype(">u2")
    header = f"P5\n{h.width} {h.height}\n65535\n".encode("ascii")
    return header + q.tobytes()


def _sidecar_doc(h):
    return {
        "image_id": h.image_id,
        "method": h.method,
        "epsilon": h.epsilon,
        "target_class": h.target_class,
        "min": h.norm_min,
        "max": h.norm_max,
        "width": h.width,
        "height": h.height,
    }


def write_heatmap(h, path):
    """Write a normalized heatmap as PGM plus a ``.json`` sidecar next to it."""
    with open(path, "wb") as fh:
        fh.write(heatmap_to_pgm_bytes(h))
    with open(sidecar_path(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_sidecar_doc(h), fh, indent=2, sort_keys=True)
        fh.write("\n")


_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def _parse_pgm(buf):
    pos = 0
    tokens = []
    while len(tokens) < 4:
        m = _PGM_TOKEN.match(buf, pos)
        if m is None:
            raise FormatError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError("not a binary PGM (P5) file")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("malformed PGM header") from None
    if not (0 < maxval < 65536) or width < 1 or height < 1:
        raise FormatError("malformed PGM header")
    pos += 1  # single whitespace byte before the raster
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(buf) - pos != need:
        raise FormatError(f"PGM raster has {len(buf) - pos} bytes, expected {need}")
    data = np.frombuffer(buf, dtype=dtype, offset=pos).reshape(height, width)
    return data.astype(np.float64) / maxval


def read_heatmap(path):
    """Read a PGM heatmap; provenance comes from the sidecar when it exists."""
    with open(path, "rb") as fh:
        values = _parse_pgm(fh.read())
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed heatmap sidecar {side}: {exc}") from None
        if (meta.get("width"), meta.get("height")) != (values.shape[1], values.shape[0]):
            raise FormatError("heatmap sidecar dimensions disagree with the PGM raster")
    return Heatmap(
        values,
        meta.get("method", "unknown"),
        int(meta.get("target_class", -1)),
        meta.get("image_id", Path(path).stem),
        epsilon=meta.get("epsilon"),
        normalized=True,
        norm_min=meta.get("min"),
        norm_max=meta.get("max"),
    )


# --------------------------------------------------------------------------
# annotation masks
# --------------------------------------------------------------------------


def load_mask(path):
    """Read an 8-bit grayscale PNG whose values are annotation levels 0-3."""
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise InputError(f"annotation mask must be 8-bit grayscale, got mode {im.mode}")
            mask = np.asarray(im, dtype=np.uint8).copy()
    except OSError as exc:
        raise InputError(f"cannot read mask {path}: {exc}") from None
    bad = np.setdiff1d(np.unique(mask), MASK_LEVELS)
    if bad.size:
        raise InputError(f"annotation mask contains values outside {{0,1,2,3}}: {bad.tolist()}")
    return mask


def save_mask(mask, path):
    mask = np.asarray(mask)
    if np.setdiff1d(np.unique(mask), MASK_LEVELS).size:
        raise InputError("annotation mask values must be in {0,1,2,3}")
    Image.fromarray(mask.astype(np.uint8)).save(path, format="PNG")


# --------------------------------------------------------------------------
# dataset manifest
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    image_id: str
    path: str
    label: int
    magnification: int
    annotation: str = None


def read_manifest(path):
    """Parse ``image_id,path,label,magnification[,annotation]``.

    Relative paths are resolved against the manifest's directory.
    """
    base = Path(path).parent
    rows, seen = [], set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if fields[:4] != ["image_id", "path", "label", "magnification"]:
            raise FormatError(
                "manifest header must start with image_id,path,label,magnification"
            )
        for lineno, rec in enumerate(reader, start=2):
            try:
                label = int(rec["label"])
                mag = int(rec["magnification"])
            except (TypeError, ValueError):
                raise InputError(f"manifest line {lineno}: label/magnification must be integers") from None
            if mag not in MAGNIFICATIONS:
                raise InputError(f"manifest line {lineno}: magnification {mag} not in {MAGNIFICATIONS}")
            if label < 0:
                raise InputError(f"manifest line {lineno}: negative label")
            image_id = rec["image_id"]
            if image_id in seen:
                raise InputError(f"manifest line {lineno}: duplicate image_id {image_id!r}")
            seen.add(image_id)
            ann = rec.get("annotation") or None
            rows.append(
                ManifestRow(
                    image_id,
                    str(base / rec["path"]),
                    label,
                    mag,
                    str(base / ann) if ann else None,
                )
            )
    return rows


def write_manifest(rows, path):
    with_ann = any(r.annotation for r in rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "path", "label", "magnification"] + (["annotation"] if with_ann else []))
        for r in rows:
            w.writerow(
                [r.image_id, r.path, r.label, r.magnification]
                + ([r.annotation or ""] if with_ann else [])
            )


_BREAKHIS = re.compile(
    r"^SOB[_-](?P<tumor_class>[BM])[_-](?P<tumor_type>[A-Z]+)-(?P<year>\d{2})-"
    r"(?P<slide>[0-9A-Z]+)-(?P<magnification>40|100|200|400)-(?P<seq>\d+)$"
)

BREAKHIS_TYPES = {
    "B": {"A": "adenosis", "F": "fibroadenoma", "PT": "phyllodes tumor", "TA": "tubular adenoma"},
    "M": {
        "DC": "ductal carcinoma",
        "LC": "lobular carcinoma",
        "MC": "mucinous carcinoma",
        "PC": "papillary carcinoma",
    },
}


def parse_breakhis_name(name):
    """Split a BreakHis file name such as ``SOB_M_DC-14-16716-40-010.png``.

    Returns a dict with ``tumor_class`` ("B" or "M"), ``tumor_type``,
    ``year``, ``slide``, ``magnification`` (int) and ``seq``.
    """
    stem = Path(name).name
    stem = stem.split(".", 1)[0] if "." in stem else stem
    m = _BREAKHIS.match(stem)
    if m is None:
        raise InputError(f"{name!r} does not follow the BreakHis naming scheme")
    out = m.groupdict()
    if out["tumor_type"] not in BREAKHIS_TYPES[out["tumor_class"]]:
        raise InputError(f"unknown tumor type {out['tumor_type']!r} for class {out['tumor_class']}")
    out["magnification"] = int(out["magnification"])
    return out


def manifest_from_breakhis_dir(directory, pattern="*.png"):
    """Build manifest rows (benign = 0, malignant = 1) from BreakHis-named files."""
    directory = Path(directory)
    rows = []
    for p in sorted(directory.rglob(pattern)):
        info = parse_breakhis_name(p.name)
        rows.append(
            ManifestRow(
                p.stem,
                os.path.relpath(p, directory),
                0 if info["tumor_class"] == "B" else 1,
                info["magnification"],
            )
        )
    return rows
