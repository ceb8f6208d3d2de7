"""Split feed-forward classifiers with clipped-ReLU activations.

A network is a chain of affine layers. Every layer except the last is
followed by ``clip(z, 0, clip_threshold)``; ``split_index`` counts the layers
that make up the left half ``f_L`` and the rest form ``f_R``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class AffineLayer:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=float, ndmin=2)
        self.bias = np.array(self.bias, dtype=float).reshape(-1)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"bias of length {self.bias.size} does not fit weight {self.weight.shape}"
            )
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Network:
    layers: list[AffineLayer]
    clip_threshold: float = 1.0
    split_index: int = 1

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        if not self.clip_threshold > 0:
            raise ValueError("clip_threshold must be positive")
        for k in range(1, len(self.layers)):
            if self.layers[k].in_dim != self.layers[k - 1].out_dim:
                raise ValueError(
                    f"layer {k} expects {self.layers[k].in_dim} inputs but layer "
                    f"{k - 1} produces {self.layers[k - 1].out_dim}"
                )
        if not 0 <= self.split_index <= len(self.layers):
            raise ValueError(
                f"split_index {self.split_index} outside [0, {len(self.layers)}]"
            )

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def hidden_dim(self) -> int:
        """Width of ``f_L``'s output, where smoothing noise is injected."""
        if self.split_index == 0:
            return self.input_dim
        return self.layers[self.split_index - 1].out_dim

    def copy(self) -> "Network":
        return Network(
            [AffineLayer(l.weight.copy(), l.bias.copy()) for l in self.layers],
            self.clip_threshold,
            self.split_index,
        )

    def with_split(self, split_index: int) -> "Network":
        return Network(self.layers, self.clip_threshold, split_index)


@dataclass
class GradientTape:
    """Parameter gradients mirroring a network's layer shapes."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray | None = field(default=None)

    @classmethod
    def zeros_like(cls, net: Network) -> "GradientTape":
        return cls(
            [np.zeros_like(l.weight) for l in net.layers],
            [np.zeros_like(l.bias) for l in net.layers],
        )

    def add_(self, other: "GradientTape", scale: float = 1.0) -> "GradientTape":
        for a, b in zip(self.weights, other.weights):
            a += scale * b
        for a, b in zip(self.biases, other.biases):
            a += scale * b
        return self

    def scale_(self, scale: float) -> "GradientTape":
        for a in self.weights + self.biases:
            a *= scale
        return self

    def zero_(self) -> "GradientTape":
        for a in self.weights + self.biases:
            a.fill(0.0)
        return self

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.extend([w.ravel(), b.ravel()])
        return np.concatenate(parts)


def clip_relu(x, theta_act: float):
    """0 below 0, identity on (0, theta_act), theta_act above."""
    if not theta_act > 0:
        raise ValueError("theta_act must be positive")
    out = np.clip(x, 0.0, theta_act)
    return float(out) if np.ndim(out) == 0 else out


def _as_batch(x, dim: int, what: str):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != dim:
        raise ValueError(f"{what} must have {dim} features, got shape {x.shape}")
    return batch, single


def _run(net: Network, h: np.ndarray, start: int, stop: int) -> np.ndarray:
    last = net.depth - 1
    for k in range(start, stop):
        layer = net.layers[k]
        h = h @ layer.weight.T + layer.bias
        if k != last:
            h = np.clip(h, 0.0, net.clip_threshold)
    return h


def forward_left(net: Network, x) -> np.ndarray:
    """``f_L(x)``: the first ``split_index`` layers with their activations."""
    batch, single = _as_batch(x, net.input_dim, "input")
    out = _run(net, batch, 0, net.split_index)
    return out[0] if single else out


def forward_right(net: Network, h) -> np.ndarray:
    """``f_R(h)``: the remaining layers, no activation after the last."""
    batch, single = _as_batch(h, net.hidden_dim, "hidden vector")
    out = _run(net, batch, net.split_index, net.depth)
    return out[0] if single else out


def forward(net: Network, x, split_noise=None) -> np.ndarray:
    """Logits of ``f_R(f_L(x) + split_noise)``; ``split_noise=None`` means none."""
    h = forward_left(net, x)
    if split_noise is not None:
        h = h + split_noise
    return forward_right(net, h)


def predict(net: Network, x) -> np.ndarray:
    """Deterministic argmax class; ties go to the smallest index."""
    return np.argmax(forward(net, x), axis=-1)


def backward(net: Network, x, logit_gradient, split_noise=None) -> GradientTape:
    """Reverse-mode gradient of ``sum(logits * logit_gradient)``.

    ``x`` and ``logit_gradient`` may be single vectors or matching batches;
    batch gradients are summed. The clipped ReLU has derivative 1 strictly
    inside ``(0, clip_threshold)`` and 0 elsewhere. The input gradient is
    stored in ``tape.inputs`` with the same shape as ``x``.
    """
    batch, single = _as_batch(x, net.input_dim, "input")
    g = np.asarray(logit_gradient, dtype=float)
    g = g[None, :] if g.ndim == 1 else g
    if g.shape != (batch.shape[0], net.num_classes):
        raise ValueError(f"logit_gradient shape {g.shape} does not match the batch")
    theta = net.clip_threshold
    last = net.depth - 1

    acts = [batch]
    pre = []
    h = batch
    for k, layer in enumerate(net.layers):
        if k == net.split_index and split_noise is not None:
            h = h + split_noise
            acts[-1] = h
        z = h @ layer.weight.T + layer.bias
        pre.append(z)
        h = z if k == last else np.clip(z, 0.0, theta)
        acts.append(h)
    # with split_index == depth the noise lands on the logits and has no
    # effect on any parameter gradient

    tape = GradientTape.zeros_like(net)
    for k in range(last, -1, -1):
        if k != last:
            z = pre[k]
            g = g * ((z > 0.0) & (z < theta))
        tape.weights[k] = g.T @ acts[k]
        tape.biases[k] = g.sum(axis=0)
        g = g @ net.layers[k].weight
    tape.inputs = g[0] if single else g
    return tape


def conv_as_affine(kernel, image_shape, stride: int = 1, padding: int = 0,
                   bias=None) -> AffineLayer:
    """Materialize a 2-D convolution as a dense affine layer.

    ``kernel`` has shape ``(out_ch, in_ch, kh, kw)`` (a 2-D kernel is taken as
    a single channel pair) and ``image_shape`` is ``(in_ch, H, W)`` or
    ``(H, W)``. Images are flattened channel-major, rows then columns, on
    both sides. ``bias`` is one value per output channel.
    """
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim == 2:
        kernel = kernel[None, None]
    if len(image_shape) == 2:
        image_shape = (1, *image_shape)
    out_ch, in_ch, kh, kw = kernel.shape
    c, height, width = image_shape
    if c != in_ch:
        raise ValueError(f"kernel expects {in_ch} channels, image has {c}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    if height > 32 or width > 32:
        raise ValueError("conv_as_affine is limited to images of at most 32x32")
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError("kernel does not fit the padded image")

    weight = np.zeros((out_ch * out_h * out_w, c * height * width))
    for o in range(out_ch):
        for i in range(out_h):
            for j in range(out_w):
                row = (o * out_h + i) * out_w + j
                for ci in range(in_ch):
                    for a in range(kh):
                        r = i * stride + a - padding
                        if not 0 <= r < height:
                            continue
                        for b in range(kw):
                            s = j * stride + b - padding
                            if 0 <= s < width:
                                weight[row, (ci * height + r) * width + s] += kernel[o, ci, a, b]
    if bias is None:
        full_bias = np.zeros(weight.shape[0])
    else:
        full_bias = np.repeat(np.asarray(bias, dtype=float), out_h * out_w)
    return AffineLayer(weight, full_bias)


def init_network(sizes, clip_threshold: float = 1.0, split_index: int = 1,
                 rng=None) -> Network:
    """He-style random initialization for layer widths ``sizes``."""
    from .numerics import RngStream, as_generator

    gen = as_generator(rng if rng is not None else RngStream(0))
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = gen.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        layers.append(AffineLayer(w, np.zeros(fan_out)))
    return Network(layers, clip_threshold, split_index)


# ---------------------------------------------------------------------------
# serialization

_TOP_KEYS = {"version", "input_dim", "num_classes", "clip_threshold", "split_index", "layers"}
_LAYER_KEYS = {"out_dim", "in_dim", "weights", "bias"}


def model_to_dict(net: Network) -> dict:
    return {
        "version": FORMAT_VERSION,
        "input_dim": net.input_dim,
        "num_classes": net.num_classes,
        "clip_threshold": float(net.clip_threshold),
        "split_index": net.split_index,
        "layers": [
            {
                "out_dim": layer.out_dim,
                "in_dim": layer.in_dim,
                "weights": [float(v) for v in layer.weight.ravel()],
                "bias": [float(v) for v in layer.bias],
            }
            for layer in net.layers
        ],
    }


def model_from_dict(doc: dict) -> Network:
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    extra, missing = set(doc) - _TOP_KEYS, _TOP_KEYS - set(doc)
    if extra or missing:
        raise ModelFormatError(f"unknown fields {sorted(extra)}, missing fields {sorted(missing)}")
    if doc["version"] != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {doc['version']!r}")
    layers = []
    for k, entry in enumerate(doc["layers"]):
        if not isinstance(entry, dict) or set(entry) != _LAYER_KEYS:
            raise ModelFormatError(f"layer {k} must have exactly the fields {sorted(_LAYER_KEYS)}")
        rows, cols = entry["out_dim"], entry["in_dim"]
        weights = np.array(entry["weights"], dtype=float)
        if weights.size != rows * cols or len(entry["bias"]) != rows:
            raise ModelFormatError(f"layer {k} entry counts do not match {rows}x{cols}")
        try:
            layers.append(AffineLayer(weights.reshape(rows, cols), entry["bias"]))
        except ValueError as exc:
            raise ModelFormatError(f"layer {k}: {exc}") from exc
    try:
        net = Network(layers, float(doc["clip_threshold"]), int(doc["split_index"]))
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc
    if net.input_dim != doc["input_dim"] or net.num_classes != doc["num_classes"]:
        raise ModelFormatError("input_dim/num_classes disagree with the layer shapes")
    return net


def save_model(net: Network, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(net)) + "\n", encoding="utf-8")


def load_model(path) -> Network:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(doc)
