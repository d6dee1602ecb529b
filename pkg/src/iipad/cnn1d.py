"""Temporal 1-D CNN over 75 x 768 histogram matrices, in plain NumPy.

Activations are kept as ``(channels, time, bins)``. Every convolution kernel
spans only the time axis, so a ``k x 1`` convolution is ``k`` matrix products
between the ``(C_out, C_in)`` kernel slices and time-shifted views of the input.

Layer list::

     1 conv 3x1 (1->64, pad 1)    2 relu    3 avgpool 2x1
     4 conv 3x1 (64->64, pad 1)   5 relu    6 avgpool 2x1
     7 conv 3x1                   8 relu    9 avgpool 2x1
    10 conv 3x1                  11 relu   12 avgpool 2x1
    13 conv 3x1                  14 relu   15 avgpool 2x1
    16 conv 2x1 (pad 0)          17 relu
    18 conv 1x1                  19 transpose
    20 fully connected (768*64 -> 2)       21 softmax

The plane feature is the layer-18 output ``(64, 1, 768)`` averaged (or maxed)
over channels.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    FormatError,
    InputError,
    InvalidArgumentError,
    InvalidStateError,
    TrainingDivergedError,
)
from .tophist import PLANES, HistogramMatrix

# class index of each label in the softmax output
CLASS_INDEX = {"attack": 0, "bona_fide": 1}
TEMPORAL_TRACE = (75, 75, 37, 37, 18, 18, 9, 9, 4, 4, 2, 1, 1)
FEATURE_LAYER = 18  # 1-based, the last convolution
FEATURE_MODES = ("mean", "max")


# ---------------------------------------------------------------- layers


class Layer:
    code = 0
    has_params = False

    def out_shape(self, shape):
        return shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy, cache, need_dx=True):
        """Return (dx, grads); ``grads`` is a tuple matching :attr:`params`."""
        raise NotImplementedError

    @property
    def params(self) -> tuple:
        return ()


class Conv(Layer):
    """``k x 1`` convolution along time with zero padding ``pad`` on both ends."""

    code = 1
    has_params = True

    def __init__(self, weight: np.ndarray, bias: np.ndarray, pad: int):
        if weight.ndim != 3 or bias.shape != (weight.shape[0],):
            raise InvalidArgumentError("conv weight must be (out, in, k) with matching bias")
        self.weight, self.bias, self.pad = weight, bias, pad

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    @property
    def params(self):
        return (self.weight, self.bias)

    def out_shape(self, shape):
        c, t, f = shape
        if c != self.weight.shape[1]:
            raise InvalidArgumentError(f"conv expects {self.weight.shape[1]} channels, got {c}")
        t_out = t + 2 * self.pad - self.kernel + 1
        if t_out < 1:
            raise InvalidArgumentError(f"temporal length {t} too short for a {self.kernel}x1 kernel")
        return (self.weight.shape[0], t_out, f)

    def _matrix(self) -> np.ndarray:
        """Kernel as (out, k * in), tap-major to match :meth:`_columns`."""
        cout, cin, k = self.weight.shape
        return np.ascontiguousarray(self.weight.transpose(0, 2, 1).reshape(cout, k * cin))

    def _columns(self, x: np.ndarray, t_out: int) -> np.ndarray:
        """Stack the ``k`` time-shifted copies of ``x``: (k * in, t_out * bins)."""
        c, t, f = x.shape
        cols = np.zeros((self.kernel, c, t_out, f), dtype=x.dtype)
        for j in range(self.kernel):
            lo = j - self.pad  # input time feeding output time 0 through tap j
            src_lo, src_hi = max(lo, 0), min(lo + t_out, t)
            if src_hi > src_lo:
                cols[j, :, src_lo - lo : src_hi - lo] = x[:, src_lo:src_hi]
        return cols.reshape(self.kernel * c, t_out * f)

    def forward(self, x):
        cout, t_out, f = self.out_shape(x.shape)
        cols = self._columns(x, t_out)
        y = self._matrix() @ cols
        y += self.bias[:, None]
        return y.reshape(cout, t_out, f), (cols, x.shape[1])

    def backward(self, dy, cache, need_dx=True):
        cols, t = cache
        cout, t_out, f = dy.shape
        cin, k = self.weight.shape[1], self.kernel
        dflat = dy.reshape(cout, -1)
        dw = (dflat @ cols.T).reshape(cout, k, cin).transpose(0, 2, 1)
        db = dflat.sum(axis=1)
        dx = None
        if need_dx:
            dcols = (np.ascontiguousarray(self._matrix().T) @ dflat).reshape(k, cin, t_out, f)
            dx = np.zeros((cin, t, f), dtype=dy.dtype)
            for j in range(k):
                lo = j - self.pad
                src_lo, src_hi = max(lo, 0), min(lo + t_out, t)
                if src_hi > src_lo:
                    dx[:, src_lo:src_hi] += dcols[j, :, src_lo - lo : src_hi - lo]
        return dx, (np.ascontiguousarray(dw), db)


class ReLU(Layer):
    code = 2

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, mask, need_dx=True):
        return dy * mask, ()


class AvgPool(Layer):
    """2 x 1 average pooling, stride 2, no padding; an odd trailing step is dropped."""

    code = 3

    def out_shape(self, shape):
        c, t, f = shape
        if t < 2:
            raise InvalidArgumentError(f"cannot pool temporal length {t}")
        return (c, t // 2, f)

    def forward(self, x):
        c, t, f = x.shape
        self.out_shape(x.shape)
        h = t // 2
        y = 0.5 * (x[:, 0 : 2 * h : 2] + x[:, 1 : 2 * h : 2])
        return y, t

    def backward(self, dy, t, need_dx=True):
        c, h, f = dy.shape
        dx = np.zeros((c, t, f), dtype=dy.dtype)
        half = 0.5 * dy
        dx[:, 0 : 2 * h : 2] = half
        dx[:, 1 : 2 * h : 2] = half
        return dx, ()


class Transpose(Layer):
    """(channels, time, bins) -> (bins, time, channels)."""

    code = 4

    def out_shape(self, shape):
        return shape[::-1]

    def forward(self, x):
        return np.ascontiguousarray(x.transpose(2, 1, 0)), None

    def backward(self, dy, cache, need_dx=True):
        return np.ascontiguousarray(dy.transpose(2, 1, 0)), ()


class Dense(Layer):
    """Fully connected map from the flattened input tensor to ``out`` logits."""

    code = 5
    has_params = True

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise InvalidArgumentError("dense weight must be (out, in) with matching bias")
        self.weight, self.bias = weight, bias

    @property
    def params(self):
        return (self.weight, self.bias)

    def out_shape(self, shape):
        n = int(np.prod(shape))
        if n != self.weight.shape[1]:
            raise InvalidArgumentError(f"dense layer expects {self.weight.shape[1]} inputs, got {n}")
        return (self.weight.shape[0],)

    def forward(self, x):
        self.out_shape(x.shape)
        return self.weight @ x.ravel() + self.bias, x

    def backward(self, dy, x, need_dx=True):
        dw = np.outer(dy, x.ravel())
        dx = (self.weight.T @ dy).reshape(x.shape) if need_dx else None
        return dx, (dw, dy.copy())


class Softmax(Layer):
    """Marker for the output layer; the loss couples it with cross-entropy."""

    code = 6

    def forward(self, x):
        return softmax(x), None


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


_LAYER_TYPES = {cls.code: cls for cls in (Conv, ReLU, AvgPool, Transpose, Dense, Softmax)}


# ---------------------------------------------------------------- network


@dataclass
class Cache:
    inputs: list
    states: list
    probs: np.ndarray


class Network:
    """Ordered layers ending in :class:`Softmax`, plus per-parameter momentum buffers."""

    def __init__(
        self,
        layers: Sequence[Layer],
        input_shape: tuple[int, int],
        plane: str = "XY",
        dtype=np.float32,
    ):
        if plane not in PLANES:
            raise InvalidArgumentError(f"unknown plane {plane!r}")
        if not layers or not isinstance(layers[-1], Softmax):
            raise InvalidArgumentError("the last layer must be a softmax")
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.plane = plane
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            if layer.has_params:
                layer.weight = np.ascontiguousarray(layer.weight, dtype=self.dtype)
                layer.bias = np.ascontiguousarray(layer.bias, dtype=self.dtype)
        self.shapes = self._shape_trace()
        self.velocity = [np.zeros_like(p) for p in self.parameters()]

    def _shape_trace(self) -> list[tuple]:
        shape = (1, *self.input_shape)
        shapes = [shape]
        for layer in self.layers:
            shape = layer.out_shape(shape)
            shapes.append(shape)
        return shapes

    def temporal_trace(self) -> tuple[int, ...]:
        """Time length of the input and after every convolution and pooling layer."""
        out = [self.input_shape[0]]
        for layer, shape in zip(self.layers, self.shapes[1:]):
            if isinstance(layer, (Conv, AvgPool)):
                out.append(shape[1])
        return tuple(out)

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def copy(self) -> "Network":
        clone = Network.__new__(Network)
        clone.__dict__.update(self.__dict__)
        clone.layers = []
        for layer in self.layers:
            if isinstance(layer, Conv):
                layer = Conv(layer.weight.copy(), layer.bias.copy(), layer.pad)
            elif isinstance(layer, Dense):
                layer = Dense(layer.weight.copy(), layer.bias.copy())
            clone.layers.append(layer)
        clone.velocity = [v.copy() for v in self.velocity]
        return clone

    def astype(self, dtype) -> "Network":
        clone = self.copy()
        clone.dtype = np.dtype(dtype)
        for layer in clone.layers:
            if layer.has_params:
                layer.weight = layer.weight.astype(dtype)
                layer.bias = layer.bias.astype(dtype)
        clone.velocity = [v.astype(dtype) for v in clone.velocity]
        return clone

    def _input(self, h) -> np.ndarray:
        values = h.values if isinstance(h, HistogramMatrix) else np.asarray(h)
        if values.shape != self.input_shape:
            raise InvalidArgumentError(
                f"input must be {self.input_shape[0]}x{self.input_shape[1]}, got {values.shape}"
            )
        return values.astype(self.dtype)[None]

    def forward(self, h, stop: int | None = None) -> tuple[np.ndarray, Cache]:
        """Class probabilities (attack, bona_fide) and the cache for :meth:`backward`.

        ``stop`` (1-based layer index) returns that layer's output instead.
        """
        x = self._input(h)
        inputs, states = [], []
        for i, layer in enumerate(self.layers[:-1], start=1):
            inputs.append(x)
            x, state = layer.forward(x)
            states.append(state)
            if stop == i:
                return x, Cache(inputs, states, None)
        probs = softmax(x)
        return probs, Cache(inputs, states, probs)

    def logits(self, h) -> np.ndarray:
        return self.forward(h, stop=len(self.layers) - 1)[0]

    def predict(self, h) -> np.ndarray:
        return self.forward(h)[0]

    def loss_and_grads(self, h, label: int) -> tuple[float, list[np.ndarray]]:
        """Cross-entropy of one sample and its gradient for every parameter."""
        probs, cache = self.forward(h)
        loss = -float(np.log(max(probs[label], np.finfo(np.float64).tiny)))
        dy = probs.copy()
        dy[label] -= 1.0
        dy = dy.astype(self.dtype)
        grads: list = []
        body = self.layers[:-1]
        for i in range(len(body) - 1, -1, -1):
            layer = body[i]
            dy, g = layer.backward(dy, cache.states[i], need_dx=i > 0)
            grads[:0] = list(g)
        return loss, grads

    def feature(self, h, mode: str = "mean") -> np.ndarray:
        """768-vector from the layer-18 output, reduced across channels."""
        if mode not in FEATURE_MODES:
            raise InvalidArgumentError(f"feature mode must be one of {FEATURE_MODES}")
        if len(self.layers) < FEATURE_LAYER:
            raise InvalidStateError("network has no feature layer")
        out, _ = self.forward(h, stop=FEATURE_LAYER)
        channels, t, bins = out.shape
        reduced = out.mean(axis=0) if mode == "mean" else out.max(axis=0)
        return reduced.reshape(t * bins).astype(np.float64)


@dataclass(frozen=True)
class PlaneFeature:
    plane: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise InvalidArgumentError("plane feature must be a finite vector")
        object.__setattr__(self, "values", v)


def extract_feature(net: Network, h, mode: str = "mean") -> PlaneFeature:
    return PlaneFeature(net.plane, net.feature(h, mode))


def _he(rng: np.random.Generator, shape, fan_in: int, gain: float = 2.0) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(gain / fan_in)


def init_network(
    seed: int,
    plane: str = "XY",
    dtype=np.float32,
    frames: int = 75,
    bins: int = 768,
    channels: int = 64,
    check_trace: bool = True,
) -> Network:
    """The Table-1 layout with He-normal convolutions and a unit-gain dense layer.

    Raises :class:`InvalidStateError` when ``check_trace`` is set and the
    temporal trace differs from (75, 75, 37, 37, 18, 18, 9, 9, 4, 4, 2, 1, 1).
    """
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    cin = 1
    for _ in range(5):
        layers += [
            Conv(_he(rng, (channels, cin, 3), 3 * cin), np.zeros(channels), pad=1),
            ReLU(),
            AvgPool(),
        ]
        cin = channels
    layers += [
        Conv(_he(rng, (channels, channels, 2), 2 * channels), np.zeros(channels), pad=0),
        ReLU(),
        Conv(_he(rng, (channels, channels, 1), channels), np.zeros(channels), pad=0),
        Transpose(),
    ]
    body = Network(layers + [Softmax()], (frames, bins), plane, dtype)
    fan_in = int(np.prod(body.shapes[-1]))  # flattened transpose output
    fc = Dense(_he(rng, (2, fan_in), fan_in, gain=1.0), np.zeros(2))
    net = Network(layers + [fc, Softmax()], (frames, bins), plane, dtype)
    if check_trace and net.temporal_trace() != TEMPORAL_TRACE:
        raise InvalidStateError(f"temporal trace {net.temporal_trace()} != {TEMPORAL_TRACE}")
    if net.shapes[-1] != (2,):
        raise InvalidStateError(f"network output shape {net.shapes[-1]} is not two logits")
    return net


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    epochs: int = 300
    seed: int = 0
    patience: int | None = None  # epochs without dev improvement before stopping

    def __post_init__(self):
        if self.learning_rate < 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise InvalidArgumentError("learning rate, momentum and decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidArgumentError("batch size and epoch budget must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise InvalidArgumentError("patience must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float  # from the forward passes made during the epoch
    dev_loss: float | None = None


@dataclass
class TrainResult:
    network: Network
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None


def _label(y) -> int:
    if isinstance(y, str):
        if y not in CLASS_INDEX:
            raise InvalidArgumentError(f"unknown label {y!r}")
        return CLASS_INDEX[y]
    y = int(y)
    if y not in (0, 1):
        raise InvalidArgumentError(f"class index must be 0 or 1, got {y}")
    return y


def backward_step(
    net: Network,
    batch: Sequence[tuple],
    cfg: TrainConfig,
    epoch: int = 0,
    batch_index: int = 0,
) -> tuple[Network, float, int]:
    """One SGD-with-momentum update on the mean cross-entropy of ``batch``.

    Updates ``net`` in place and returns it with the mean loss and the number of
    correctly classified samples (judged before the update). Weight decay is
    added to the weight gradients; biases are not decayed.
    """
    if not batch:
        raise InvalidArgumentError("empty batch")
    params = net.parameters()
    total = [np.zeros_like(p) for p in params]
    loss_sum, correct = 0.0, 0
    for h, y in batch:
        label = _label(y)
        loss, grads = net.loss_and_grads(h, label)
        loss_sum += loss
        correct += int(loss < np.log(2.0))
        for acc, g in zip(total, grads):
            acc += g
    mean_loss = loss_sum / len(batch)
    if not np.isfinite(mean_loss):
        raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {batch_index}")
    lr, mu, decay = cfg.learning_rate, cfg.momentum, cfg.weight_decay
    scale = 1.0 / len(batch)
    idx = 0
    for layer in net.layers:
        for role, p in zip(("w", "b"), layer.params):
            g = total[idx] * scale
            if role == "w":
                g += decay * p
            v = net.velocity[idx]
            v *= mu
            v -= lr * g
            p += v
            idx += 1
    if not all(np.all(np.isfinite(p)) for p in params):
        raise TrainingDivergedError(f"non-finite weights at epoch {epoch}, batch {batch_index}")
    return net, mean_loss, correct


def mean_loss(net: Network, data: Sequence[tuple]) -> float:
    total = 0.0
    for h, y in data:
        p = net.predict(h)[_label(y)]
        total -= float(np.log(max(p, np.finfo(np.float64).tiny)))
    return total / len(data)


def accuracy(net: Network, data: Sequence[tuple]) -> float:
    hits = sum(int(np.argmax(net.predict(h)) == _label(y)) for h, y in data)
    return hits / len(data)


def train(
    net: Network,
    data: Sequence[tuple],
    cfg: TrainConfig,
    dev: Sequence[tuple] | None = None,
    on_epoch: Callable[[EpochRecord], bool | None] | None = None,
) -> TrainResult:
    """Mini-batch SGD over ``data`` (pairs of matrix and label).

    With ``dev`` the weights of the epoch with the lowest dev loss are
    returned; otherwise the final weights. ``on_epoch`` may return True to stop.
    The input network is trained in place.
    """
    data = list(data)
    if not data:
        raise InvalidArgumentError("empty training set")
    if len({_label(y) for _, y in data}) < 2:
        raise InvalidArgumentError("training set must contain both classes")
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(net)
    best_loss, best_net, stale = np.inf, None, 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data))
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [data[i] for i in order[start : start + cfg.batch_size]]
            _, loss, hits = backward_step(net, batch, cfg, epoch, b)
            loss_sum += loss * len(batch)
            correct += hits
        record = EpochRecord(epoch, loss_sum / len(data), correct / len(data))
        if dev:
            record.dev_loss = mean_loss(net, dev)
            if record.dev_loss < best_loss:
                best_loss, best_net, stale = record.dev_loss, net.copy(), 0
                result.best_epoch = epoch
            else:
                stale += 1
        result.history.append(record)
        if on_epoch is not None and on_epoch(record):
            break
        if cfg.patience is not None and dev and stale >= cfg.patience:
            break
    if best_net is not None:
        result.network = best_net
    return result


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"IINN"
CHECKPOINT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sHHIII")  # magic, version, plane, layers, frames, bins
_LAYER_HEAD = struct.Struct("<HH")  # type code, weight rank


def _pack_array(buf: io.BytesIO, a: np.ndarray) -> None:
    buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def save_network(net: Network, path: str | os.PathLike) -> None:
    """Write a checkpoint (weights stored as little-endian float32).

    Layout: header ``<4sHHIII>`` (magic ``IINN``, version, plane index, layer
    count, input frames, input bins); then per layer ``<HH>`` (type code,
    weight rank r), and when r > 0: r uint32 weight dims, float32 weights,
    one uint32 bias length, float32 biases. Convolution padding is
    ``(k - 1) // 2``.
    """
    buf = io.BytesIO()
    buf.write(
        _CKPT_HEAD.pack(
            CHECKPOINT_MAGIC,
            CHECKPOINT_VERSION,
            PLANES.index(net.plane),
            len(net.layers),
            *net.input_shape,
        )
    )
    for layer in net.layers:
        if layer.has_params:
            buf.write(_LAYER_HEAD.pack(layer.code, layer.weight.ndim))
            _pack_array(buf, layer.weight)
            _pack_array(buf, layer.bias)
        else:
            buf.write(_LAYER_HEAD.pack(layer.code, 0))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_network(path: str | os.PathLike, dtype=np.float32) -> Network:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        magic, version, plane, count, frames, bins = _CKPT_HEAD.unpack_from(data)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint header") from exc
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION or plane >= len(PLANES):
        raise FormatError(f"{path}: unsupported checkpoint version/plane")
    pos = _CKPT_HEAD.size

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise FormatError(f"{path}: truncated checkpoint")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    def array(rank: int) -> np.ndarray:
        nonlocal pos
        shape = take(f"<{rank}I")
        n = int(np.prod(shape))
        if pos + 4 * n > len(data):
            raise FormatError(f"{path}: truncated checkpoint")
        a = np.frombuffer(data, "<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
        return a.astype(dtype)

    layers: list[Layer] = []
    for _ in range(count):
        code, rank = take("<HH")
        if code not in _LAYER_TYPES:
            raise FormatError(f"{path}: unknown layer type {code}")
        if code == Conv.code:
            w = array(rank)
            layers.append(Conv(w, array(1), pad=(w.shape[2] - 1) // 2))
        elif code == Dense.code:
            w = array(rank)
            layers.append(Dense(w, array(1)))
        else:
            layers.append(_LAYER_TYPES[code]())
    if pos != len(data):
        raise FormatError(f"{path}: trailing bytes in checkpoint")
    try:
        return Network(layers, (frames, bins), PLANES[plane], dtype)
    except InvalidArgumentError as exc:
        raise FormatError(f"{path}: inconsistent layer shapes: {exc}") from exc
