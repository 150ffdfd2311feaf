"""Network topology, weights, and traced forward/backward passes.

A network spec is a human-readable file: global ``key = value`` lines plus an
ordered ``layer ...`` list (conv / relu / maxpool / flatten / fc / softmax).
Shapes are validated when the spec is loaded, and every conv and every fc
layer except the last must be followed by a relu so the saliency pipeline
always has its per-ReLU tap points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import GradientTape, backward
from .errors import ConfigError, ShapeMismatchError, TraceError
from . import tensor_ops as T

TAP_BEFORE = "before_softmax"
TAP_AFTER = "after_softmax"

_LAYER_KINDS = ("conv", "relu", "maxpool", "flatten", "fc", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    window: int = 0
    out_features: int = 0


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer descriptors plus input shape and class-name table."""

    input_shape: tuple[int, int, int]
    class_names: tuple[str, ...]
    layers: tuple[LayerSpec, ...]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def relu_names(self) -> tuple[str, ...]:
        return tuple(l.name for l in self.layers if l.kind == "relu")

    @property
    def learnable_names(self) -> tuple[str, ...]:
        return tuple(l.name for l in self.layers if l.kind in ("conv", "fc"))

    def layer_shapes(self) -> list[tuple]:
        """Output shape after each layer; raises ConfigError if shapes do not chain."""
        shape = self.input_shape
        out = []
        for layer in self.layers:
            shape = _shape_after(layer, shape, self.num_classes)
            out.append(shape)
        return out


def _shape_after(layer: LayerSpec, shape, num_classes: int):
    if layer.kind == "conv":
        if len(shape) != 3:
            raise ConfigError(f"conv layer {layer.name} needs a (C,H,W) input, got {shape}")
        ho, wo = T.conv_output_hw(shape[1], shape[2], layer.kernel, layer.kernel,
                                  layer.stride, layer.pad)
        return (layer.out_channels, ho, wo)
    if layer.kind == "relu":
        return shape
    if layer.kind == "maxpool":
        if len(shape) != 3:
            raise ConfigError(f"maxpool {layer.name} needs a (C,H,W) input, got {shape}")
        if shape[1] % layer.stride or shape[2] % layer.stride:
            raise ConfigError(
                f"maxpool {layer.name}: dims {shape[1]}x{shape[2]} not divisible "
                f"by stride {layer.stride}"
            )
        return (shape[0], shape[1] // layer.stride, shape[2] // layer.stride)
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    if layer.kind == "fc":
        if len(shape) != 1:
            raise ConfigError(f"fc layer {layer.name} needs a flat input, got {shape}")
        return (layer.out_features,)
    if layer.kind == "softmax":
        if len(shape) != 1 or shape[0] != num_classes:
            raise ConfigError(
                f"softmax input shape {shape} does not match class count {num_classes}"
            )
        return shape
    raise ConfigError(f"unknown layer kind {layer.kind!r}")


def validate_spec(spec: NetworkSpec) -> None:
    """Check layer chaining plus the conv/fc-followed-by-relu rule."""
    if len(spec.input_shape) != 3 or any(d < 1 for d in spec.input_shape):
        raise ConfigError(f"input shape must be (C,H,W), got {spec.input_shape}")
    if spec.num_classes < 2:
        raise ConfigError("need at least two classes")
    spec.layer_shapes()
    fc_indices = [i for i, l in enumerate(spec.layers) if l.kind == "fc"]
    for i, layer in enumerate(spec.layers):
        needs_relu = layer.kind == "conv" or (
            layer.kind == "fc" and i != (fc_indices[-1] if fc_indices else -1)
        )
        if needs_relu:
            if i + 1 >= len(spec.layers) or spec.layers[i + 1].kind != "relu":
                raise ConfigError(f"layer {layer.name} must be followed by a relu")
    if not spec.layers or spec.layers[-1].kind != "softmax":
        raise ConfigError("network must end with a softmax layer")
    names = [l.name for l in spec.layers]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate layer names")


def parse_network_spec(text: str) -> NetworkSpec:
    input_shape = None
    class_names: tuple[str, ...] | None = None
    layers: list[LayerSpec] = []
    counters: dict[str, int] = {}

    def auto_name(kind: str) -> str:
        counters[kind] = counters.get(kind, 0) + 1
        return f"{kind}{counters[kind]}"

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("layer "):
            parts = line.split()
            kind = parts[1]
            if kind not in _LAYER_KINDS:
                raise ConfigError(f"line {lineno}: unknown layer kind {kind!r}")
            attrs = {}
            for tok in parts[2:]:
                if "=" not in tok:
                    raise ConfigError(f"line {lineno}: expected key=value, got {tok!r}")
                k, v = tok.split("=", 1)
                attrs[k] = v
            layers.append(_make_layer(kind, attrs, auto_name, lineno))
        elif "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "input":
                dims = value.lower().split("x")
                if len(dims) != 3:
                    raise ConfigError(f"line {lineno}: input must be CxHxW")
                input_shape = tuple(int(d) for d in dims)
            elif key == "classes":
                if value.strip().isdigit():
                    n = int(value)
                    class_names = tuple(f"class_{i}" for i in range(n))
                else:
                    class_names = tuple(s.strip() for s in value.split(",") if s.strip())
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        else:
            raise ConfigError(f"line {lineno}: cannot parse {line!r}")

    if input_shape is None:
        raise ConfigError("spec is missing the input shape")
    if class_names is None:
        raise ConfigError("spec is missing the class table")
    spec = NetworkSpec(input_shape, class_names, tuple(layers))
    validate_spec(spec)
    return spec


_LAYER_ATTRS = {
    "conv": {"name", "out", "kernel", "stride", "pad"},
    "maxpool": {"name", "window", "stride"},
    "fc": {"name", "out"},
    "relu": {"name"},
    "flatten": {"name"},
    "softmax": {"name"},
}


def _make_layer(kind, attrs, auto_name, lineno) -> LayerSpec:
    unknown = set(attrs) - _LAYER_ATTRS[kind]
    if unknown:
        raise ConfigError(f"line {lineno}: unknown {kind} attributes {sorted(unknown)}")

    def need_int(key, default=None):
        if key not in attrs:
            if default is None:
                raise ConfigError(f"line {lineno}: {kind} layer needs {key}=")
            return default
        return int(attrs[key])

    name = attrs.pop("name", None) or auto_name("pool" if kind == "maxpool" else kind)
    if kind == "conv":
        return LayerSpec("conv", name, out_channels=need_int("out"),
                         kernel=need_int("kernel"), stride=need_int("stride", 1),
                         pad=need_int("pad", 0))
    if kind == "maxpool":
        return LayerSpec("maxpool", name, window=need_int("window", 2),
                         stride=need_int("stride", 2))
    if kind == "fc":
        return LayerSpec("fc", name, out_features=need_int("out"))
    return LayerSpec(kind, name)


def load_network_spec(path) -> NetworkSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_network_spec(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read network spec {path}: {exc}") from exc


# ---------------------------------------------------------------- weights

@dataclass
class NetworkWeights:
    """Named parameter tensors, keyed ``<layer>.weight`` / ``<layer>.bias``."""

    tensors: dict[str, np.ndarray]

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(dict(self.tensors))

    def deep_copy(self) -> "NetworkWeights":
        return NetworkWeights({k: v.copy() for k, v in self.tensors.items()})

    def checksum(self) -> int:
        import zlib
        crc = 0
        for name in sorted(self.tensors):
            crc = zlib.crc32(name.encode(), crc)
            crc = zlib.crc32(np.ascontiguousarray(self.tensors[name]).tobytes(), crc)
        return crc


def parameter_shapes(spec: NetworkSpec) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    shape = spec.input_shape
    for layer in spec.layers:
        if layer.kind == "conv":
            shapes[f"{layer.name}.weight"] = (
                layer.out_channels, shape[0], layer.kernel, layer.kernel
            )
            shapes[f"{layer.name}.bias"] = (layer.out_channels,)
        elif layer.kind == "fc":
            shapes[f"{layer.name}.weight"] = (layer.out_features, shape[0])
            shapes[f"{layer.name}.bias"] = (layer.out_features,)
        shape = _shape_after(layer, shape, spec.num_classes)
    return shapes


def init_bound(weight_shape: tuple) -> float:
    """Kaiming-uniform bound sqrt(6 / fan_in); fan_in is all non-output dims."""
    fan_in = int(np.prod(weight_shape[1:]))
    return math.sqrt(6.0 / fan_in)


def init_weights(spec: NetworkSpec, seed: int) -> NetworkWeights:
    """Seeded Kaiming-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(spec).items():
        if name.endswith(".weight"):
            bound = init_bound(shape)
            tensors[name] = rng.uniform(-bound, bound, shape).astype(np.float32)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float32)
    return NetworkWeights(tensors)


def validate_weights(spec: NetworkSpec, weights: NetworkWeights) -> None:
    expected = parameter_shapes(spec)
    for name, shape in expected.items():
        if name not in weights.tensors:
            raise ShapeMismatchError(f"missing parameter tensor {name}")
        got = weights.tensors[name].shape
        if tuple(got) != shape:
            layer = name.split(".")[0]
            raise ShapeMismatchError(
                f"shape mismatch at layer {layer}: {name} is {got}, expected {shape}"
            )
    extras = set(weights.tensors) - set(expected)
    if extras:
        raise ShapeMismatchError(f"unexpected parameter tensors: {sorted(extras)}")


# ---------------------------------------------------------------- forward

def _check_image(spec: NetworkSpec, image: np.ndarray) -> None:
    if tuple(image.shape) != tuple(spec.input_shape):
        raise ShapeMismatchError(
            f"image shape {tuple(image.shape)} does not match spec input "
            f"{tuple(spec.input_shape)}"
        )


def run_layers(spec: NetworkSpec, weights: NetworkWeights, image: np.ndarray,
               relu_hook=None):
    """Plain (untraced) forward pass.

    ``relu_hook(name, tensor) -> tensor`` lets callers rewrite each ReLU
    output in place of the original before it feeds the next layer.  Returns
    ``(probabilities, logits, relu_outputs)`` with relu outputs in layer order.
    """
    _check_image(spec, image)
    x = image
    logits = None
    relu_outs: list[np.ndarray] = []
    for layer in spec.layers:
        if layer.kind == "conv":
            out, _ = T.conv2d_batch(
                x[None], weights.tensors[f"{layer.name}.weight"],
                weights.tensors[f"{layer.name}.bias"], layer.stride, layer.pad,
            )
            x = out[0]
        elif layer.kind == "relu":
            x = T.relu(x)
            if relu_hook is not None:
                x = relu_hook(layer.name, x)
            relu_outs.append(x)
        elif layer.kind == "maxpool":
            out, _ = T.maxpool2d_batch(x[None], layer.window, layer.stride)
            x = out[0]
        elif layer.kind == "flatten":
            x = x.reshape(-1)
        elif layer.kind == "fc":
            x = T.fully_connected(
                x, weights.tensors[f"{layer.name}.weight"],
                weights.tensors[f"{layer.name}.bias"],
            )
            logits = x
        elif layer.kind == "softmax":
            x = T.softmax(x)
    T.check_finite("forward pass", x)
    return x, logits, relu_outs


def forward(spec: NetworkSpec, weights: NetworkWeights, image: np.ndarray) -> np.ndarray:
    """Class probabilities for one image."""
    probs, _, _ = run_layers(spec, weights, image)
    return probs


def build_tape_forward(tape: GradientTape, spec: NetworkSpec, weights: NetworkWeights,
                       x_id: int, param_ids: dict[str, int], with_softmax: bool = True):
    """Record the network's layers on *tape* starting from node *x_id*.

    Returns ``(probs_or_logits_id, logits_id, relu_node_ids)``.
    """
    nid = x_id
    logits_id = None
    relu_ids: dict[str, int] = {}
    for layer in spec.layers:
        if layer.kind == "conv":
            nid = tape.conv2d(nid, param_ids[f"{layer.name}.weight"],
                              param_ids[f"{layer.name}.bias"], layer.stride, layer.pad)
        elif layer.kind == "relu":
            nid = tape.relu(nid)
            relu_ids[layer.name] = nid
        elif layer.kind == "maxpool":
            nid = tape.maxpool2d(nid, layer.window, layer.stride)
        elif layer.kind == "flatten":
            nid = tape.flatten(nid)
        elif layer.kind == "fc":
            nid = tape.fully_connected(nid, param_ids[f"{layer.name}.weight"],
                                       param_ids[f"{layer.name}.bias"])
            logits_id = nid
        elif layer.kind == "softmax":
            if with_softmax:
                nid = tape.softmax(nid)
    return nid, logits_id, relu_ids


@dataclass
class ActivationTrace:
    """Saved per-ReLU activations plus, after back-propagation, their gradients."""

    activations: dict[str, np.ndarray]
    probabilities: np.ndarray
    logits: np.ndarray
    top5: tuple[int, ...]
    gradients: dict[str, np.ndarray] = field(default_factory=dict)
    tap: str | None = None
    category: int | None = None
    _tape: GradientTape | None = None
    _relu_ids: dict[str, int] = field(default_factory=dict)
    _logits_id: int = -1
    _probs_id: int = -1

    def release(self) -> None:
        """Drop the tape; further back-propagation on this trace will fail."""
        self._tape = None


def top_k_indices(probs: np.ndarray, k: int) -> tuple[int, ...]:
    """Indices of the k largest probabilities; ties broken by lower class index."""
    order = np.argsort(-probs, kind="stable")
    return tuple(int(i) for i in order[:k])


def forward_traced(spec: NetworkSpec, weights: NetworkWeights,
                   image: np.ndarray) -> ActivationTrace:
    """Forward pass that records the tape and captures every ReLU output."""
    _check_image(spec, image)
    tape = GradientTape()
    param_ids = {name: tape.leaf(t) for name, t in weights.tensors.items()}
    x_id = tape.leaf(image)
    probs_id, logits_id, relu_ids = build_tape_forward(tape, spec, weights, x_id, param_ids)
    probs = tape.value(probs_id)
    T.check_finite("forward_traced", probs)
    return ActivationTrace(
        activations={name: tape.value(nid) for name, nid in relu_ids.items()},
        probabilities=probs,
        logits=tape.value(logits_id),
        top5=top_k_indices(probs, min(5, spec.num_classes)),
        _tape=tape,
        _relu_ids=relu_ids,
        _logits_id=logits_id,
        _probs_id=probs_id,
    )


def backprop_category(trace: ActivationTrace, class_index: int,
                      tap: str = TAP_AFTER) -> ActivationTrace:
    """Fill per-ReLU gradients of the selected class score.

    ``tap`` selects the backward seed: the class probability (after softmax,
    the default) or the class logit (before softmax).
    """
    if trace._tape is None:
        raise TraceError("trace already consumed; cannot back-propagate")
    if tap not in (TAP_BEFORE, TAP_AFTER):
        raise ConfigError(f"unknown tap point {tap!r}")
    n_classes = trace.probabilities.shape[0]
    if not 0 <= class_index < n_classes:
        raise ShapeMismatchError(f"class index {class_index} out of range {n_classes}")
    tape = trace._tape
    source = trace._probs_id if tap == TAP_AFTER else trace._logits_id
    seed = tape.pick(source, class_index)
    grads = backward(tape, seed)
    trace.gradients = {name: grads[nid] for name, nid in trace._relu_ids.items()}
    trace.tap = tap
    trace.category = class_index
    return trace
