"""Layer definitions for the feed-forward engine.

Layers are frozen and hold read-only float64 weights. Each layer knows its
output shape, its forward map and the vector-Jacobian product of that map
(``backward``); the latter is also what LRP reuses to redistribute relevance.
"""

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import ValidationError

__all__ = ["Conv2D", "ReLU", "MaxPool2D", "Flatten", "Dense", "same_padding", "LAYER_KINDS"]


def _frozen_array(a, ndim):
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValidationError(f"expected a rank-{ndim} weight array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def same_padding(size, kernel, stride):
    """Return ``(before, after)`` zero padding for "same" convolution along one axis.

    Output length is ``ceil(size / stride)``; odd totals put the extra pixel after.
    """
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


@dataclass(frozen=True, eq=False)
class Conv2D:
    weights: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray  # (out_ch,)
    stride: int = 1
    padding: str = "valid"

    kind = "Conv2D"
    weighted = True

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen_array(self.weights, 4))
        object.__setattr__(self, "bias", _frozen_array(self.bias, 1))
        if self.padding not in ("same", "valid"):
            raise ValidationError(f"unknown padding mode {self.padding!r}")
        if int(self.stride) < 1:
            raise ValidationError("stride must be >= 1")
        object.__setattr__(self, "stride", int(self.stride))
        if min(self.weights.shape) < 1:
            raise ValidationError("kernel dims and channel counts must be >= 1")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ValidationError("bias length does not match out-channels")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def kernel_size(self):
        return self.weights.shape[2], self.weights.shape[3]

    def _pads(self, h, w):
        kh, kw = self.kernel_size
        if self.padding == "valid":
            return (0, 0), (0, 0)
        return same_padding(h, kh, self.stride), same_padding(w, kw, self.stride)

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValidationError(f"Conv2D needs a (C, H, W) input, got {tuple(in_shape)}")
        c, h, w = in_shape
        if c != self.weights.shape[1]:
            raise ValidationError(f"Conv2D expects {self.weights.shape[1]} input channels, got {c}")
        kh, kw = self.kernel_size
        (pt, pb), (pl, pr) = self._pads(h, w)
        hp, wp = h + pt + pb, w + pl + pr
        if hp < kh or wp < kw:
            raise ValidationError(f"Conv2D kernel {kh}x{kw} larger than input {h}x{w}")
        return (self.out_channels, (hp - kh) // self.stride + 1, (wp - kw) // self.stride + 1)

    def forward(self, x):
        (pt, pb), (pl, pr) = self._pads(x.shape[1], x.shape[2])
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr))) if pt or pb or pl or pr else x
        out = kernels.conv2d_forward(np.ascontiguousarray(xp), self.weights, self.stride)
        out += self.bias[:, None, None]
        return out, None

    def backward(self, x, cache, grad):
        h, w = x.shape[1], x.shape[2]
        (pt, pb), (pl, pr) = self._pads(h, w)
        dxp = kernels.conv2d_backward_input(
            np.ascontiguousarray(grad), self.weights, self.stride, h + pt + pb, w + pl + pr
        )
        return np.ascontiguousarray(dxp[:, pt:pt + h, pl:pl + w])

    def param_count(self):
        return self.weights.size + self.bias.size

    def describe(self):
        kh, kw = self.kernel_size
        return f"{self.out_channels} filters {kh}x{kw}, stride {self.stride}, {self.padding}"


@dataclass(frozen=True, eq=False)
class Dense:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    kind = "Dense"
    weighted = True

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen_array(self.weights, 2))
        object.__setattr__(self, "bias", _frozen_array(self.bias, 1))
        if min(self.weights.shape) < 1:
            raise ValidationError("Dense dims must be >= 1")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ValidationError("bias length does not match out-features")

    @property
    def out_features(self):
        return self.weights.shape[0]

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ValidationError(f"Dense needs a rank-1 input, got {tuple(in_shape)}")
        if in_shape[0] != self.weights.shape[1]:
            raise ValidationError(
                f"Dense expects {self.weights.shape[1]} inputs, got {in_shape[0]}"
            )
        return (self.out_features,)

    def forward(self, x):
        return self.weights @ x + self.bias, None

    def backward(self, x, cache, grad):
        return self.weights.T @ grad

    def param_count(self):
        return self.weights.size + self.bias.size

    def describe(self):
        return f"{self.weights.shape[1]} -> {self.out_features}"


@dataclass(frozen=True)
class ReLU:
    kind = "ReLU"
    weighted = False

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return np.maximum(x, 0.0), None

    def backward(self, x, cache, grad):
        # subgradient at exactly 0 is 0
        return np.where(x > 0.0, grad, 0.0)

    def param_count(self):
        return 0

    def describe(self):
        return ""


@dataclass(frozen=True)
class MaxPool2D:
    pool_size: tuple = (2, 2)
    stride: int = 2

    kind = "MaxPool2D"
    weighted = False

    def __post_init__(self):
        ph, pw = (int(v) for v in self.pool_size)
        if ph < 1 or pw < 1:
            raise ValidationError("pool window dims must be >= 1")
        if int(self.stride) < 1:
            raise ValidationError("stride must be >= 1")
        object.__setattr__(self, "pool_size", (ph, pw))
        object.__setattr__(self, "stride", int(self.stride))

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValidationError(f"MaxPool2D needs a (C, H, W) input, got {tuple(in_shape)}")
        c, h, w = in_shape
        ph, pw = self.pool_size
        if h < ph or w < pw:
            raise ValidationError(f"pool window {ph}x{pw} larger than input {h}x{w}")
        return (c, (h - ph) // self.stride + 1, (w - pw) // self.stride + 1)

    def forward(self, x):
        out, arg = kernels.maxpool_forward(np.ascontiguousarray(x), *self.pool_size, self.stride)
        return out, arg

    def backward(self, x, cache, grad):
        if cache is None:
            _, cache = self.forward(x)
        return kernels.maxpool_backward(np.ascontiguousarray(grad), cache, x.shape[1], x.shape[2])

    def param_count(self):
        return 0

    def describe(self):
        return f"{self.pool_size[0]}x{self.pool_size[1]}, stride {self.stride}"


@dataclass(frozen=True)
class Flatten:
    kind = "Flatten"
    weighted = False

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(-1), None

    def backward(self, x, cache, grad):
        return grad.reshape(x.shape)

    def param_count(self):
        return 0

    def describe(self):
        return ""


LAYER_KINDS = {cls.kind: cls for cls in (Conv2D, ReLU, MaxPool2D, Flatten, Dense)}
