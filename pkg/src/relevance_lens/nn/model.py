"""Model container, forward pass with tracing, gradient backward, classify."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, ValidationError

__all__ = ["Model", "LayerRecord", "ActivationTrace", "forward", "backward", "classify"]


@dataclass(frozen=True, eq=False)
class Model:
    """An immutable, shape-checked stack of layers.

    ``mean`` and ``scale`` are per-channel preprocessing constants: a raw pixel
    ``v`` in [0, 1] enters the network as ``(v - mean[c]) / scale[c]``.
    """

    layers: tuple
    input_shape: tuple
    mean: np.ndarray
    scale: np.ndarray
    class_labels: tuple
    shapes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "class_labels", tuple(str(c) for c in self.class_labels))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValidationError(f"input shape must be (C, H, W) positive, got {self.input_shape}")
        c = self.input_shape[0]
        for name in ("mean", "scale"):
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            if arr.shape != (c,):
                raise ValidationError(f"preprocessing {name} must have {c} entries, got {arr.size}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"preprocessing {name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.scale == 0.0):
            raise ValidationError("preprocessing scale must be non-zero")
        if not self.layers:
            raise ValidationError("model has no layers")
        if not self.class_labels:
            raise ValidationError("model declares no class labels")

        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            for name in ("weights", "bias"):
                arr = getattr(layer, name, None)
                if arr is not None and not np.all(np.isfinite(arr)):
                    raise ValidationError(f"layer {i} ({layer.kind}): non-finite {name}", i)
            try:
                shapes.append(tuple(int(d) for d in layer.output_shape(shapes[-1])))
            except ValidationError as exc:
                raise ValidationError(f"layer {i} ({layer.kind}): {exc}", i) from None
        if len(shapes[-1]) != 1 or shapes[-1][0] != len(self.class_labels):
            raise ValidationError(
                f"final output shape {shapes[-1]} does not match "
                f"{len(self.class_labels)} class labels",
                len(self.layers) - 1,
            )
        object.__setattr__(self, "shapes", tuple(shapes))

    @property
    def n_classes(self):
        return len(self.class_labels)

    def param_count(self):
        return sum(layer.param_count() for layer in self.layers)

    def preprocess(self, raw):
        """Map a raw ``(C, H, W)`` image in [0, 1] to network input space."""
        raw = np.asarray(raw, dtype=np.float64)
        return (raw - self.mean[:, None, None]) / self.scale[:, None, None]

    def unpreprocess(self, x):
        return np.asarray(x, dtype=np.float64) * self.scale[:, None, None] + self.mean[:, None, None]

    def positive_class(self):
        """Index of the class scored by ROC-AUC: "malignant" if present, else the last class."""
        for i, name in enumerate(self.class_labels):
            if name.lower() == "malignant":
                return i
        return self.n_classes - 1


@dataclass(frozen=True, eq=False)
class LayerRecord:
    input: np.ndarray
    output: np.ndarray
    cache: object = None


@dataclass(frozen=True, eq=False)
class ActivationTrace:
    records: tuple
    logits: np.ndarray


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise InputError(f"input shape {x.shape} does not match model input {model.input_shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("input contains non-finite values")
    return np.ascontiguousarray(x)


def forward(model, image):
    """Run ``model`` on a preprocessed ``(C, H, W)`` tensor.

    Returns
    -------
    logits : ndarray, shape (n_classes,)
    trace : ActivationTrace
        One record per layer, holding that layer's input and output.
    """
    x = _check_input(model, image)
    records = []
    for layer in model.layers:
        out, cache = layer.forward(x)
        records.append(LayerRecord(x, out, cache))
        x = out
    return x, ActivationTrace(tuple(records), x)


def _check_target(model, target_class):
    if not isinstance(target_class, (int, np.integer)) or not 0 <= target_class < model.n_classes:
        raise InputError(f"target class {target_class!r} outside [0, {model.n_classes})")
    return int(target_class)


def backward(model, trace, target_class):
    """Gradient of the pre-softmax logit ``target_class`` w.r.t. the network input."""
    c = _check_target(model, target_class)
    if len(trace.records) != len(model.layers):
        raise InputError("trace does not belong to this model")
    grad = np.zeros(model.n_classes)
    grad[c] = 1.0
    for layer, rec in zip(reversed(model.layers), reversed(trace.records)):
        grad = layer.backward(rec.input, rec.cache, grad)
    return grad


def classify(model, image):
    """Return ``(argmax class, logits)``; ``np.argmax`` breaks ties towards the lowest index."""
    logits, _ = forward(model, image)
    return int(np.argmax(logits)), logits
