"""Reader/writer for the ``RLNS`` binary model format.

Layout::

    0..3     b"RLNS"
    4..7     version, u32 little-endian (= 1)
    8..11    header length H, u32 little-endian
    12..12+H UTF-8 JSON header
    ...      weight blobs, float32 little-endian, in layer order
             (weights then bias for every weighted layer)

Conv2D weights are ``[out][in][kh][kw]``, Dense weights ``[out][in]``. Input
widths of weighted layers are derived from ``weight_count``. The file must end
exactly at the last blob byte.
"""

import json
import struct

import numpy as np

from ..errors import FormatError, ValidationError
from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU
from .model import Model

__all__ = ["MAGIC", "VERSION", "load_model", "save_model", "model_to_bytes", "model_from_bytes"]

MAGIC = b"RLNS"
VERSION = 1
_F32 = np.dtype("<f4")


def _layer_header(layer):
    if isinstance(layer, Conv2D):
        kh, kw = layer.kernel_size
        return {
            "kind": "Conv2D",
            "out_channels": layer.out_channels,
            "kernel": [kh, kw],
            "stride": layer.stride,
            "padding": layer.padding,
            "weight_count": int(layer.weights.size),
            "bias_count": int(layer.bias.size),
        }
    if isinstance(layer, Dense):
        return {
            "kind": "Dense",
            "out_features": layer.out_features,
            "weight_count": int(layer.weights.size),
            "bias_count": int(layer.bias.size),
        }
    if isinstance(layer, MaxPool2D):
        return {"kind": "MaxPool2D", "pool": list(layer.pool_size), "stride": layer.stride}
    return {"kind": layer.kind}


def model_to_bytes(model):
    header = {
        "input_shape": list(model.input_shape),
        "preprocessing": {"mean": model.mean.tolist(), "scale": model.scale.tolist()},
        "class_labels": list(model.class_labels),
        "layers": [_layer_header(layer) for layer in model.layers],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes]
    for layer in model.layers:
        if layer.weighted:
            parts.append(layer.weights.astype(_F32).tobytes())
            parts.append(layer.bias.astype(_F32).tobytes())
    return b"".join(parts)


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def _int(entry, key, index):
    try:
        v = entry[key]
    except KeyError:
        raise FormatError(f"layer {index}: missing field {key!r}") from None
    if not isinstance(v, int) or isinstance(v, bool):
        raise FormatError(f"layer {index}: field {key!r} must be an integer")
    return v


def _pair(entry, key, index):
    v = entry.get(key)
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(d, int) for d in v)):
        raise FormatError(f"layer {index}: field {key!r} must be a pair of integers")
    return v


class _BlobReader:
    def __init__(self, buf, offset):
        self.buf = buf
        self.pos = offset

    def take(self, count):
        if count < 0:
            raise FormatError("negative blob size")
        end = self.pos + 4 * count
        if end > len(self.buf):
            raise FormatError("unexpected end of weights")
        arr = np.frombuffer(self.buf, dtype=_F32, count=count, offset=self.pos).astype(np.float64)
        self.pos = end
        return arr


def _build_layer(entry, index, blobs):
    if not isinstance(entry, dict) or "kind" not in entry:
        raise FormatError(f"layer {index}: malformed layer entry")
    kind = entry["kind"]
    if kind == "ReLU":
        return ReLU()
    if kind == "Flatten":
        return Flatten()
    if kind == "MaxPool2D":
        ph, pw = _pair(entry, "pool", index)
        try:
            return MaxPool2D((ph, pw), _int(entry, "stride", index))
        except ValidationError as exc:
            raise ValidationError(f"layer {index} (MaxPool2D): {exc}", index) from None
    if kind in ("Conv2D", "Dense"):
        wcount = _int(entry, "weight_count", index)
        bcount = _int(entry, "bias_count", index)
        w = blobs.take(wcount)
        b = blobs.take(bcount)
        if kind == "Conv2D":
            co = _int(entry, "out_channels", index)
            kh, kw = _pair(entry, "kernel", index)
            per_in = co * kh * kw
            if per_in <= 0 or wcount % per_in:
                raise ValidationError(
                    f"layer {index} (Conv2D): weight_count {wcount} not a multiple of "
                    f"out_channels*kh*kw = {per_in}",
                    index,
                )
            try:
                return Conv2D(
                    w.reshape(co, wcount // per_in, kh, kw),
                    b,
                    stride=_int(entry, "stride", index),
                    padding=entry.get("padding", "valid"),
                )
            except ValidationError as exc:
                raise ValidationError(f"layer {index} (Conv2D): {exc}", index) from None
        out = _int(entry, "out_features", index)
        if out <= 0 or wcount % out:
            raise ValidationError(
                f"layer {index} (Dense): weight_count {wcount} not a multiple of out_features {out}",
                index,
            )
        try:
            return Dense(w.reshape(out, wcount // out), b)
        except ValidationError as exc:
            raise ValidationError(f"layer {index} (Dense): {exc}", index) from None
    raise FormatError(f"layer {index}: unknown layer kind {kind!r}")


def model_from_bytes(buf):
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise FormatError("bad magic: not an RLNS model file")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported model format version {version}")
    if 12 + hlen > len(buf):
        raise FormatError("unexpected end of header")
    try:
        header = json.loads(buf[12:12 + hlen].decode("utf-8"))
        input_shape = header["input_shape"]
        pre = header["preprocessing"]
        mean, scale = pre["mean"], pre["scale"]
        labels = header["class_labels"]
        layer_entries = header["layers"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed header: {exc}") from None
    blobs = _BlobReader(buf, 12 + hlen)
    layers = [_build_layer(entry, i, blobs) for i, entry in enumerate(layer_entries)]
    if blobs.pos != len(buf):
        raise FormatError(f"{len(buf) - blobs.pos} trailing bytes after last weight blob")
    return Model(layers, input_shape, mean, scale, labels)


def load_model(path):
    """Read and validate an ``RLNS`` model file."""
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
