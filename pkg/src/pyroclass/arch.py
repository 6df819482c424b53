"""Construction and execution of the depth-1..5 VGG16-derived model family.

Each model is ``depth`` VGG16 convolutional sections (3x3 convs + ReLU,
section closed by a 2x2 max-pool), a channel-reducing 1x1 "head"
convolution sized so the flattened feature count is identical at every
depth, then two hidden dense+ReLU+dropout layers and a softmax
classifier.  Input is single-channel (grayscale), channel-first.
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import ConfigError, ShapeError
from .tasks import TASK_CLASSES, num_classes_for
from .tensor import DTYPE

# VGG16 section widths and conv counts per section.
SECTION_WIDTHS = (64, 128, 256, 512, 512)
SECTION_CONVS = (2, 2, 3, 3, 3)

# Flattened feature count shared by every depth at 224x224 input.
FLAT_FEATURES = 25088

REFERENCE_INPUT = 224


def head_channels(depth):
    """Output channels of the 1x1 head conv that keep the flatten size at 25088."""
    if depth not in (1, 2, 3, 4, 5):
        raise ConfigError(f"depth must be 1..5, got {depth}")
    spatial = REFERENCE_INPUT // 2 ** depth
    return FLAT_FEATURES // (spatial * spatial)


@dataclass
class ModelConfig:
    """Architecture descriptor: which task, how deep, and the input geometry.

    ``input_size`` and ``dense_units`` default to the full-scale values
    (224, 4096); tests shrink them to build the tiny variant with the
    same topology.
    """

    task: str
    depth: int
    num_classes: int = 0
    dropout_rate: float = 0.5
    input_size: int = 224
    dense_units: int = 4096

    def __post_init__(self):
        if self.task not in TASK_CLASSES:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {sorted(TASK_CLASSES)}")
        if self.depth not in (1, 2, 3, 4, 5):
            raise ConfigError(f"depth must be 1..5, got {self.depth}")
        expected = num_classes_for(self.task)
        if self.num_classes == 0:
            self.num_classes = expected
        elif self.num_classes != expected:
            raise ConfigError(
                f"task {self.task!r} has {expected} classes, config says {self.num_classes}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.input_size < 2 ** self.depth or self.input_size % 2 ** self.depth:
            raise ConfigError(
                f"input_size {self.input_size} is not divisible by 2^{self.depth}"
            )
        if self.dense_units < 1:
            raise ConfigError(f"dense_units must be >= 1, got {self.dense_units}")

    @property
    def class_names(self):
        return TASK_CLASSES[self.task]

    @property
    def flat_features(self):
        return head_channels(self.depth) * (self.input_size // 2 ** self.depth) ** 2

    def to_dict(self):
        return {
            "task": self.task,
            "depth": self.depth,
            "num_classes": self.num_classes,
            "dropout_rate": self.dropout_rate,
            "input_size": self.input_size,
            "dense_units": self.dense_units,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Conv:
    def __init__(self, params, name):
        self.params = params
        self.name = name

    @property
    def kernel_size(self):
        return self.params.kernels.shape[2]

    def forward(self, x, training, rng):
        return L.conv2d_forward(x, self.params)

    def backward(self, cache, grad):
        grad_x, gk, gb = L.conv2d_backward(cache, grad)
        return grad_x, [gk, gb]

    def parameters(self):
        return [(f"{self.name}.kernels", self.params.kernels), (f"{self.name}.bias", self.params.bias)]


class Relu:
    def forward(self, x, training, rng):
        return L.relu_forward(x)

    def backward(self, cache, grad):
        return L.relu_backward(cache, grad), None


class Pool:
    def forward(self, x, training, rng):
        return L.maxpool2x2_forward(x)

    def backward(self, cache, grad):
        return L.maxpool2x2_backward(cache, grad), None


class Flatten:
    def forward(self, x, training, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad):
        return grad.reshape(cache), None


class Dense:
    def __init__(self, params, name):
        self.params = params
        self.name = name

    def forward(self, x, training, rng):
        return L.dense_forward(x, self.params)

    def backward(self, cache, grad):
        grad_x, gw, gb = L.dense_backward(cache, grad)
        return grad_x, [gw, gb]

    def parameters(self):
        return [(f"{self.name}.weights", self.params.weights), (f"{self.name}.bias", self.params.bias)]


class Dropout:
    def __init__(self, rate):
        self.rate = rate

    def forward(self, x, training, rng):
        return L.dropout_forward(x, self.rate, rng, training)

    def backward(self, cache, grad):
        return L.dropout_backward(cache, grad), None


class Softmax:
    def forward(self, x, training, rng):
        return L.softmax(x), None

    def backward(self, cache, grad):
        raise NotImplementedError("softmax backward is fused with the loss")


@dataclass
class Model:
    """A realized layer stack with parameters; ``step_count`` tracks optimizer updates."""

    config: ModelConfig
    layer_stack: list
    seed: int
    step_count: int = 0

    def parameters(self):
        """All (name, array) pairs in declaration order."""
        out = []
        for layer in self.layer_stack:
            if hasattr(layer, "parameters"):
                out.extend(layer.parameters())
        return out

    def set_parameters(self, arrays):
        """Rebind every parameter, in declaration order, to the given arrays."""
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"expected {len(params)} arrays, got {len(arrays)}")
        for (name, current), new in zip(params, arrays):
            if new.shape != current.shape:
                raise ShapeError(f"{name}: shape {new.shape} != {current.shape}")
        i = 0
        for layer in self.layer_stack:
            if isinstance(layer, Conv):
                layer.params = L.ConvParams(arrays[i], arrays[i + 1])
                i += 2
            elif isinstance(layer, Dense):
                layer.params = L.DenseParams(arrays[i], arrays[i + 1])
                i += 2

    def snapshot(self):
        """Copies of all parameter arrays, for best-epoch bookkeeping."""
        return [arr.copy() for _, arr in self.parameters()]

    def copy(self):
        m = build_model(self.config, self.seed)
        m.set_parameters(self.snapshot())
        m.step_count = self.step_count
        return m


def _he_conv(in_ch, out_ch, k, rng):
    std = np.sqrt(2.0 / (in_ch * k * k))
    kern = rng.normal(0.0, std, size=(out_ch, in_ch, k, k)).astype(DTYPE)
    return L.ConvParams(kern, np.zeros(out_ch, dtype=DTYPE))


def _he_dense(in_f, out_f, rng):
    std = np.sqrt(2.0 / in_f)
    w = rng.normal(0.0, std, size=(out_f, in_f)).astype(DTYPE)
    return L.DenseParams(w, np.zeros(out_f, dtype=DTYPE))


def _glorot_dense(in_f, out_f, rng):
    std = np.sqrt(2.0 / (in_f + out_f))
    w = rng.normal(0.0, std, size=(out_f, in_f)).astype(DTYPE)
    return L.DenseParams(w, np.zeros(out_f, dtype=DTYPE))


def build_model(config, seed=0):
    """Deterministically initialize the layer stack described by ``config``."""
    rng = np.random.default_rng(seed)
    stack = []
    in_ch = 1
    for s in range(config.depth):
        width = SECTION_WIDTHS[s]
        for i in range(SECTION_CONVS[s]):
            stack.append(Conv(_he_conv(in_ch, width, 3, rng), f"conv{s + 1}_{i + 1}"))
            stack.append(Relu())
            in_ch = width
        stack.append(Pool())
    stack.append(Conv(_he_conv(in_ch, head_channels(config.depth), 1, rng), "head1x1"))
    stack.append(Flatten())
    stack.append(Dense(_he_dense(config.flat_features, config.dense_units, rng), "fc1"))
    stack.append(Relu())
    stack.append(Dropout(config.dropout_rate))
    stack.append(Dense(_he_dense(config.dense_units, config.dense_units, rng), "fc2"))
    stack.append(Relu())
    stack.append(Dropout(config.dropout_rate))
    stack.append(Dense(_glorot_dense(config.dense_units, config.num_classes, rng), "fc3"))
    stack.append(Softmax())
    return Model(config=config, layer_stack=stack, seed=seed)


def _check_input(model, batch):
    s = model.config.input_size
    if batch.ndim == 3:
        batch = batch[None]
    if batch.ndim != 4 or batch.shape[1:] != (1, s, s):
        raise ShapeError(
            f"expected input [N,1,{s},{s}] or [1,{s},{s}], got shape {batch.shape}"
        )
    return batch


def _run_stack(model, batch, training, rng, collect=False):
    """Run all layers; returns (logits, probs, caches, outputs-per-layer)."""
    x = _check_input(model, batch)
    caches = []
    outputs = []
    logits = None
    for layer in model.layer_stack:
        if isinstance(layer, Softmax):
            logits = x
        x, cache = layer.forward(x, training, rng)
        caches.append(cache)
        if collect:
            outputs.append(x)
    return logits, x, caches, outputs


def forward(model, batch, training=False, rng=None):
    """Per-sample softmax scores ``[N, num_classes]``; caches retained only when training."""
    if training and rng is None and model.config.dropout_rate > 0:
        raise ConfigError("training-mode forward needs a seeded generator for dropout")
    logits, probs, caches, _ = _run_stack(model, batch, training, rng)
    return probs, (caches if training else None)


def backward(model, caches, grad_logits, upto=0):
    """Backpropagate a gradient w.r.t. pre-softmax logits down the stack.

    Processes layers with index >= ``upto`` (skipping the terminal
    softmax, whose gradient is fused into ``grad_logits`` by the loss).
    Returns (param_grads aligned with ``model.parameters()``, gradient
    w.r.t. the output of layer ``upto - 1``).
    """
    grads_by_layer = {}
    grad = grad_logits
    for i in range(len(model.layer_stack) - 2, upto - 1, -1):
        layer = model.layer_stack[i]
        grad, pgrads = layer.backward(caches[i], grad)
        if pgrads is not None:
            grads_by_layer[i] = pgrads
    param_grads = []
    for i, layer in enumerate(model.layer_stack):
        if hasattr(layer, "parameters"):
            if i in grads_by_layer:
                param_grads.extend(grads_by_layer[i])
            else:
                param_grads.extend(np.zeros_like(arr) for _, arr in layer.parameters())
    return param_grads, grad


def classify(model, image):
    """Argmax class and score vector for one image; ties go to the lowest index."""
    scores, _ = forward(model, image, training=False)
    row = scores[0]
    return int(np.argmax(row)), row


def param_count(model):
    """Total number of stored parameters (kernels, weights, biases)."""
    return int(sum(arr.size for _, arr in model.parameters()))
