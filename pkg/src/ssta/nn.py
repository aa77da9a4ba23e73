"""A small numpy convolutional classifier with exact input gradients.

Activations are batches shaped ``(N, H, W, C)``.  Parameters are kept as
float64 arrays holding float32-representable values, so the float32 weights
file round-trips exactly while every forward/backward pass accumulates in
double precision.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import FormatError, NumericalError

log = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"SSTANET1"
WEIGHTS_VERSION = 1

LossFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


class Conv2D:
    """Valid (unpadded) stride-1 convolution; weight shape ``(kh, kw, cin, cout)``."""

    tag = 1
    kind = "conv2d"

    def __init__(self, weight, bias):
        self.weight = _f32(weight)
        self.bias = _f32(bias)

    @property
    def params(self):
        return [self.weight, self.bias]

    def output_shape(self, shape):
        kh, kw, cin, cout = self.weight.shape
        h, w, c = shape
        if c != cin or h < kh or w < kw:
            raise ValueError(f"conv2d {self.weight.shape} cannot take input {shape}")
        return (h - kh + 1, w - kw + 1, cout)

    @staticmethod
    def _cols(x, kh, kw):
        ho, wo = x.shape[1] - kh + 1, x.shape[2] - kw + 1
        return np.concatenate(
            [x[:, i : i + ho, j : j + wo, :] for i in range(kh) for j in range(kw)], axis=3
        )  # (N, Ho, Wo, kh*kw*cin), ordered like weight.reshape(-1, cout)

    def forward(self, x):
        kh, kw, _, cout = self.weight.shape
        cols = self._cols(x, kh, kw)
        return cols @ self.weight.reshape(-1, cout) + self.bias, cols

    def backward(self, dout, cols, need_params=True, need_input=True):
        kh, kw, cin, cout = self.weight.shape
        dx = None
        if need_input:
            # full correlation with the spatially flipped, transposed kernel
            padded = np.pad(dout, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
            flipped = self.weight[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, cin)
            dx = self._cols(padded, kh, kw) @ flipped
        if not need_params:
            return dx, None
        dw = cols.reshape(-1, kh * kw * cin).T @ dout.reshape(-1, cout)
        return dx, [dw.reshape(kh, kw, cin, cout), dout.sum(axis=(0, 1, 2))]


class ReLU:
    tag = 2
    kind = "relu"
    params: list = []

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        return np.maximum(x, 0.0), x

    def backward(self, dout, x, need_params=True, need_input=True):
        # sub-gradient 0 at 0
        return dout * (x > 0), None


class MaxPool2:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    tag = 3
    kind = "maxpool2"
    params: list = []

    def output_shape(self, shape):
        h, w, c = shape
        if h < 2 or w < 2:
            raise ValueError(f"maxpool2 cannot take input {shape}")
        return (h // 2, w // 2, c)

    def forward(self, x):
        ho, wo = x.shape[1] // 2, x.shape[2] // 2
        quads = [x[:, r : 2 * ho : 2, c : 2 * wo : 2] for r in (0, 1) for c in (0, 1)]
        out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
        # ties go to the first maximum in (0,0),(0,1),(1,0),(1,1) scan order
        idx = np.where(quads[0] == out, 0, np.where(quads[1] == out, 1, np.where(quads[2] == out, 2, 3)))
        return out, (x.shape, idx)

    def backward(self, dout, cache, need_params=True, need_input=True):
        shape, idx = cache
        ho, wo = shape[1] // 2, shape[2] // 2
        dx = np.zeros(shape)
        for k, (r, c) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            dx[:, r : 2 * ho : 2, c : 2 * wo : 2] = np.where(idx == k, dout, 0.0)
        return dx, None


class Flatten:
    tag = 4
    kind = "flatten"
    params: list = []

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, shape, need_params=True, need_input=True):
        return dout.reshape(shape), None


class Dense:
    """Affine layer on flat vectors; weight shape ``(n_in, n_out)``."""

    tag = 5
    kind = "dense"

    def __init__(self, weight, bias):
        self.weight = _f32(weight)
        self.bias = _f32(bias)

    @property
    def params(self):
        return [self.weight, self.bias]

    def output_shape(self, shape):
        if shape != (self.weight.shape[0],):
            raise ValueError(f"dense {self.weight.shape} cannot take input {shape}")
        return (self.weight.shape[1],)

    def forward(self, x):
        return x @ self.weight + self.bias, x

    def backward(self, dout, x, need_params=True, need_input=True):
        dx = dout @ self.weight.T
        if not need_params:
            return dx, None
        return dx, [x.T @ dout, dout.sum(axis=0)]


LAYER_TYPES = {cls.tag: cls for cls in (Conv2D, ReLU, MaxPool2, Flatten, Dense)}


class Network:
    """An ordered stack of layers mapping ``input_shape`` images to class logits."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if len(shape) != 1 or shape[0] < 2:
            raise ValueError(f"network must end in at least 2 logits, got output shape {shape}")
        self.num_classes = shape[0]

    def _check_input(self, x):
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match network input {self.input_shape}")

    def forward_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        for layer in self.layers:
            x, _ = layer.forward(x)
        return x

    def forward(self, x) -> np.ndarray:
        """Raw logits for a single ``(H, W, C)`` image."""
        return self.forward_batch(np.asarray(x, dtype=np.float64)[None])[0]

    def predict(self, x) -> int:
        return int(np.argmax(self.forward(x)))

    def predict_batch(self, x, batch_size=256) -> np.ndarray:
        x = np.asarray(x)
        out = [self.forward_batch(x[i : i + batch_size]).argmax(axis=1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.intp)

    def _backward(self, x, dlogits_fn, need_params, need_input=True):
        caches = []
        a = x
        for layer in self.layers:
            a, cache = layer.forward(a)
            caches.append(cache)
        value, d = dlogits_fn(a)
        grads = []
        for depth, (layer, cache) in enumerate(zip(reversed(self.layers), reversed(caches))):
            first = depth == len(self.layers) - 1
            d, g = layer.backward(d, cache, need_params, need_input or not first)
            if g is not None:
                grads.append(g)
        grads.reverse()
        return value, a, d, grads

    def value_and_input_grad(self, x, loss: LossFn):
        """Loss value, logits and ``d loss / d x`` for one image."""
        x = np.asarray(x, dtype=np.float64)[None]
        self._check_input(x)

        def single(logits):
            value, g = loss(logits[0])
            return value, np.asarray(g, dtype=np.float64)[None]

        value, logits, dx, _ = self._backward(x, single, need_params=False)
        return value, logits[0], dx[0]

    def loss_and_param_grads(self, x, dlogits_fn):
        """Batch loss and gradients for every parameter tensor, in layer order."""
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        value, logits, _, grads = self._backward(x, dlogits_fn, need_params=True, need_input=False)
        return value, logits, [g for pair in grads for g in pair]

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def describe(self) -> str:
        parts = []
        for layer in self.layers:
            if layer.params:
                parts.append(f"{layer.kind}{tuple(layer.params[0].shape)}")
            else:
                parts.append(layer.kind)
        return " -> ".join(parts)


def input_gradient(net: Network, x, loss: LossFn) -> np.ndarray:
    """Gradient of ``loss(forward(net, x))`` with respect to the image ``x``.

    ``loss`` maps a logits vector to ``(value, d value / d logits)``.
    """
    return net.value_and_input_grad(x, loss)[2]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(labels):
    """Mean softmax cross-entropy over a batch, as a ``dlogits_fn``."""
    labels = np.asarray(labels)

    def fn(logits):
        p = softmax(logits)
        n = len(labels)
        value = -np.log(p[np.arange(n), labels] + 1e-300).mean()
        d = p.copy()
        d[np.arange(n), labels] -= 1.0
        return value, d / n

    return fn


def build_network(input_shape=(64, 64, 3), num_classes=4, *, seed=0, conv_channels=(8, 16, 32), hidden=32) -> Network:
    """Conv/relu/pool blocks (one per entry of ``conv_channels``) then two dense layers."""
    rng = np.random.default_rng(seed)
    layers = []
    shape = tuple(input_shape)
    cin = shape[2]
    for k, cout in enumerate(conv_channels):
        std = np.sqrt(2.0 / (9 * cin))
        weight = rng.normal(0.0, std, (3, 3, cin, cout))
        # first bias starts as if inputs were centered at 0.5
        bias = -0.5 * weight.sum(axis=(0, 1, 2)) if k == 0 else np.zeros(cout)
        conv = Conv2D(weight, bias)
        layers += [conv, ReLU(), MaxPool2()]
        shape = layers[-1].output_shape(layers[-2].output_shape(conv.output_shape(shape)))
        cin = cout
    layers.append(Flatten())
    n_in = int(np.prod(shape))
    layers += [
        Dense(rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, hidden)), np.zeros(hidden)),
        ReLU(),
        Dense(rng.normal(0.0, np.sqrt(1.0 / hidden), (hidden, num_classes)), np.zeros(num_classes)),
    ]
    return Network(layers, input_shape)


@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.02
    momentum: float = 0.9
    batch_size: int = 32
    weight_decay: float = 1e-4
    seed: int = 0
    conv_channels: tuple = (8, 16, 32)
    hidden: int = 32
    flip_augment: bool = True


@dataclass
class TrainReport:
    train_accuracy: float
    test_accuracy: float | None
    epoch_losses: list = field(default_factory=list)


def accuracy(net: Network, images, labels) -> float:
    if len(labels) == 0:
        return float("nan")
    return float((net.predict_batch(images) == np.asarray(labels)).mean())


def train(images, labels, cfg: TrainConfig | None = None, *, num_classes=None, test=None):
    """Fit a fresh network with minibatch SGD + momentum on softmax cross-entropy.

    The learning rate follows a cosine decay over the epochs and, with
    ``cfg.flip_augment``, each sample is mirrored left-right with probability 1/2.

    Returns ``(network, TrainReport)``.  Identical inputs and ``cfg.seed``
    give bit-identical weights.

    Raises
    ------
    ValueError
        If the training set is empty.
    NumericalError
        If the loss becomes non-finite; the message names the epoch.
    """
    cfg = cfg or TrainConfig()
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if len(images) == 0:
        raise ValueError("cannot train on an empty dataset")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    net = build_network(
        images.shape[1:], num_classes, seed=cfg.seed, conv_channels=cfg.conv_channels, hidden=cfg.hidden
    )
    params = net.params  # updated in place
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(cfg.seed + 1)
    losses = []
    for epoch in range(cfg.epochs):
        lr = 0.5 * cfg.learning_rate * (1.0 + np.cos(np.pi * epoch / cfg.epochs))
        order = rng.permutation(len(images))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = images[idx]
            if cfg.flip_augment:
                flip = rng.random(len(idx)) < 0.5
                batch = np.where(flip[:, None, None, None], batch[:, :, ::-1], batch)
            value, _, grads = net.loss_and_param_grads(batch, cross_entropy(labels[idx]))
            if not np.isfinite(value):
                raise NumericalError(f"training diverged: non-finite loss in epoch {epoch + 1}")
            total += value * len(idx)
            for p, v, g in zip(params, velocity, grads):
                v *= cfg.momentum
                v -= lr * (g + cfg.weight_decay * p)
                p += v
        losses.append(total / len(images))
        log.info("epoch %d: loss %.4f", epoch + 1, losses[-1])
    for p in params:
        p[...] = _f32(p)
    report = TrainReport(
        train_accuracy=accuracy(net, images, labels),
        test_accuracy=None if test is None else accuracy(net, *test),
        epoch_losses=losses,
    )
    return net, report


def save_weights(net: Network, path) -> None:
    """Write ``net`` in the SSTANET1 format."""
    out = bytearray(WEIGHTS_MAGIC)
    out += struct.pack("<HH", WEIGHTS_VERSION, len(net.layers))
    out += struct.pack("<III", *net.input_shape)
    for layer in net.layers:
        out += struct.pack("<B", layer.tag)
        for tensor in layer.params:
            out += struct.pack("<B", tensor.ndim)
            out += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
            out += tensor.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, raw, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated file while reading {what}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_weights(path) -> Network:
    raw = Path(path).read_bytes()
    r = _Reader(raw, path)
    magic = r.take(8, "magic") if len(raw) >= 8 else raw
    if magic != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
    version, n_layers = r.unpack("<HH", "header")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported weights version {version}")
    input_shape = r.unpack("<III", "input shape")
    layers = []
    for i in range(n_layers):
        (tag,) = r.unpack("<B", f"layer {i} tag")
        cls = LAYER_TYPES.get(tag)
        if cls is None:
            raise FormatError(f"{path}: unknown layer tag {tag} at layer {i}")
        name = f"layer {i} ({cls.kind})"
        if cls in (Conv2D, Dense):
            tensors = []
            for _ in range(2):
                (ndim,) = r.unpack("<B", f"{name} rank")
                shape = r.unpack(f"<{ndim}I", f"{name} shape")
                count = int(np.prod(shape))
                payload = r.take(4 * count, f"{name} tensor payload")
                tensors.append(np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64))
            layers.append(cls(*tensors))
        else:
            layers.append(cls())
    if r.pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - r.pos} trailing bytes after last layer")
    return Network(layers, input_shape)
