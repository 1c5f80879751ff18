"""Per-pixel relevance heatmaps: gradient saliency, LRP-Z and LRP-epsilon."""

from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError, NumericalError
from .nn.layers import ReLU
from .nn.model import _check_target, backward, forward

__all__ = [
    "AttributionMethod",
    "GRADIENT",
    "LRP_Z",
    "Heatmap",
    "parse_method",
    "gradient_saliency",
    "lrp",
    "attribute",
    "normalize_heatmap",
    "DEFAULT_EPSILON",
    "LRP_Z_MIN_DENOMINATOR",
]

DEFAULT_EPSILON = 0.01
LRP_Z_MIN_DENOMINATOR = 1e-12

METHOD_NAMES = ("gradient", "lrp-z", "lrp-epsilon")


@dataclass(frozen=True)
class AttributionMethod:
    variant: str  # one of METHOD_NAMES
    epsilon: float = None

    def __post_init__(self):
        if self.variant not in METHOD_NAMES:
            raise InputError(f"unknown attribution method {self.variant!r}")
        if self.variant == "lrp-epsilon":
            eps = DEFAULT_EPSILON if self.epsilon is None else float(self.epsilon)
            if not eps > 0 or not np.isfinite(eps):
                raise InputError(f"epsilon must be a positive float, got {self.epsilon!r}")
            object.__setattr__(self, "epsilon", eps)
        elif self.epsilon is not None:
            object.__setattr__(self, "epsilon", None)

    @property
    def name(self):
        return self.variant


GRADIENT = AttributionMethod("gradient")
LRP_Z = AttributionMethod("lrp-z")


def parse_method(name, epsilon=None):
    """Build an :class:`AttributionMethod` from its CLI name."""
    return AttributionMethod(name, epsilon if name == "lrp-epsilon" else None)


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Relevance per pixel, shape ``(H, W)``.

    When ``normalized`` is true, ``values`` lies in [0, 1] and ``norm_min`` /
    ``norm_max`` hold the raw range it was mapped from.
    """

    values: np.ndarray
    method: str
    target_class: int
    image_id: str = ""
    epsilon: float = None
    normalized: bool = False
    norm_min: float = None
    norm_max: float = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InputError(f"heatmap must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NumericalError("heatmap contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def raw_values(self):
        """Undo normalization using the recorded range."""
        if not self.normalized:
            return self.values
        return self.norm_min + self.values * (self.norm_max - self.norm_min)


def gradient_saliency(model, image, target_class, image_id=""):
    """Max over channels of ``|d logit_c / d x|``."""
    c = _check_target(model, target_class)
    _, trace = forward(model, image)
    grad = backward(model, trace, c)
    return Heatmap(np.abs(grad).max(axis=0), "gradient", c, image_id)


def lrp(model, image, target_class, method=LRP_Z, image_id=""):
    """Layer-wise relevance propagation with the z- or epsilon-rule.

    Relevance starts as the raw logit of ``target_class``. At a weighted layer
    with pre-activations ``z`` the stabilised denominator is ``d = z`` (LRP-Z)
    or ``d = z + eps * sign(z)`` with ``sign(0) = +1`` (LRP-epsilon), and
    ``R_in = x * W^T (R / d)``. ReLU passes relevance through untouched,
    max-pooling sends it to the window winner, Flatten reshapes. Input-channel
    relevances are summed into the 2-D map.

    Raises
    ------
    NumericalError
        LRP-Z met a pre-activation with ``|d_j| < 1e-12``.
    """
    if method.variant not in ("lrp-z", "lrp-epsilon"):
        raise InputError(f"lrp() needs an LRP method, got {method.variant!r}")
    c = _check_target(model, target_class)
    logits, trace = forward(model, image)
    relevance = np.zeros_like(logits)
    relevance[c] = logits[c]
    eps = method.epsilon
    for index in range(len(model.layers) - 1, -1, -1):
        layer, rec = model.layers[index], trace.records[index]
        if layer.weighted:
            z = rec.output
            carrying = relevance != 0.0
            if eps is None:
                d = z
                if np.any(np.abs(d) < LRP_Z_MIN_DENOMINATOR):
                    raise NumericalError(
                        f"LRP-Z denominator below {LRP_Z_MIN_DENOMINATOR:g} at layer {index} "
                        f"({layer.kind}); use lrp-epsilon instead",
                        index,
                    )
            else:
                d = z + eps * np.where(z >= 0.0, 1.0, -1.0)
            s = np.zeros_like(z)
            s[carrying] = relevance[carrying] / d[carrying]
            relevance = rec.input * layer.backward(rec.input, rec.cache, s)
        elif isinstance(layer, ReLU):
            continue
        else:
            relevance = layer.backward(rec.input, rec.cache, relevance)
    return Heatmap(relevance.sum(axis=0), method.variant, c, image_id, epsilon=eps)


def attribute(model, image, target_class, method, image_id=""):
    """Dispatch to :func:`gradient_saliency` or :func:`lrp`."""
    if method.variant == "gradient":
        return gradient_saliency(model, image, target_class, image_id)
    return lrp(model, image, target_class, method, image_id)


def normalize_heatmap(h):
    """Affine map onto [0, 1]; a constant heatmap maps to all zeros."""
    if h.normalized:
        return h
    v = h.values
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        out = (v - lo) / (hi - lo)
        np.clip(out, 0.0, 1.0, out=out)
    else:
        out = np.zeros_like(v)
    return replace(h, values=out, normalized=True, norm_min=lo, norm_max=hi)
