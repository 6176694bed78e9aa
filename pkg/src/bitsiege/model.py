"""Layer graph description, float-precision CNN/MLP inference, and model/dataset files."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MODEL_MAGIC = "bitsiege-model-v1"
DATA_MAGIC = "bitsiege-data-v1"
_END_HEADER = b"end-header\n"


class ModelFormatError(Exception):
    """A model/dataset file could not be parsed; message carries the location."""


@dataclass(frozen=True)
class Conv2D:
    c_in: int
    c_out: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    window: int


@dataclass(frozen=True)
class Flatten:
    pass


def _layer_out_shape(layer, shape):
    """Shape of one layer's output given its input shape (no batch dim)."""
    if isinstance(layer, Conv2D):
        if len(shape) != 3 or shape[0] != layer.c_in:
            raise ValueError(f"conv2d expects ({layer.c_in},H,W) input, got {shape}")
        if min(layer.c_in, layer.c_out, layer.kernel, layer.stride) < 1 or layer.padding < 0:
            raise ValueError("conv2d dimensions must be positive")
        h = (shape[1] + 2 * layer.padding - layer.kernel) // layer.stride + 1
        w = (shape[2] + 2 * layer.padding - layer.kernel) // layer.stride + 1
        if h < 1 or w < 1:
            raise ValueError(f"conv2d kernel {layer.kernel} too large for input {shape}")
        return (layer.c_out, h, w)
    if isinstance(layer, Dense):
        if min(layer.in_features, layer.out_features) < 1:
            raise ValueError("dense dimensions must be positive")
        if shape != (layer.in_features,):
            raise ValueError(f"dense expects ({layer.in_features},) input, got {shape}")
        return (layer.out_features,)
    if isinstance(layer, ReLU):
        return shape
    if isinstance(layer, MaxPool):
        if len(shape) != 3:
            raise ValueError(f"maxpool expects (C,H,W) input, got {shape}")
        if layer.window < 1 or shape[1] % layer.window or shape[2] % layer.window:
            raise ValueError(f"maxpool window {layer.window} does not divide {shape}")
        return (shape[0], shape[1] // layer.window, shape[2] // layer.window)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    raise TypeError(f"unknown layer {layer!r}")


def weight_shape(layer):
    if isinstance(layer, Conv2D):
        return (layer.c_out, layer.c_in, layer.kernel, layer.kernel)
    if isinstance(layer, Dense):
        return (layer.out_features, layer.in_features)
    raise TypeError(f"{layer!r} has no weights")


def filter_count(layer):
    return layer.c_out if isinstance(layer, Conv2D) else layer.out_features


def filter_size(layer):
    """Elements per filter: C_in*K*K for conv, in_features for a dense row."""
    if isinstance(layer, Conv2D):
        return layer.c_in * layer.kernel * layer.kernel
    return layer.in_features


@dataclass(frozen=True)
class Architecture:
    layers: tuple
    input_shape: tuple
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        shape = self.input_shape
        if any(d < 1 for d in shape):
            raise ValueError("input dimensions must be positive")
        for layer in self.layers:
            shape = _layer_out_shape(layer, shape)
        if shape != (self.num_classes,):
            raise ValueError(f"final output shape {shape} != ({self.num_classes},)")
        if not self.parametric_layers():
            raise ValueError("architecture needs at least one parametric layer")

    def parametric_layers(self):
        """(position-in-network, layer) for every Conv2D/Dense, in order."""
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, (Conv2D, Dense))]


def _frozen(a, dtype):
    out = np.array(a, dtype=dtype, order="C", copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class FloatModel:
    architecture: Architecture
    weights: list = field(default_factory=list)  # per parametric layer
    biases: list = field(default_factory=list)

    def __post_init__(self):
        params = self.architecture.parametric_layers()
        if len(self.weights) != len(params) or len(self.biases) != len(params):
            raise ValueError("one weight tensor and one bias vector per parametric layer")
        ws, bs = [], []
        for (_, layer), w, b in zip(params, self.weights, self.biases):
            w = _frozen(w, np.float64)
            b = _frozen(b, np.float64)
            if w.shape != weight_shape(layer):
                raise ValueError(f"weight shape {w.shape} != {weight_shape(layer)}")
            if b.shape != (filter_count(layer),):
                raise ValueError(f"bias shape {b.shape} != ({filter_count(layer)},)")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("non-finite parameter")
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (N, *input_shape)
    labels: np.ndarray  # (N,)

    def __post_init__(self):
        object.__setattr__(self, "inputs", _frozen(self.inputs, np.float64))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs/labels length mismatch")

    def __len__(self):
        return len(self.inputs)


def _conv2d(x, w, b, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    k = w.shape[2]
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    out = np.einsum("nchwij,ocij->nohw", win, w, optimize=True)
    return out + b[None, :, None, None]


def _maxpool(x, w):
    n, c, h, wd = x.shape
    return x.reshape(n, c, h // w, w, wd // w, w).max(axis=(3, 5))


def forward_batch(model: FloatModel, xs) -> np.ndarray:
    """Logits for a batch shaped (N, *input_shape)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.shape[1:] != model.architecture.input_shape:
        raise ValueError(f"input shape {xs.shape[1:]} != {model.architecture.input_shape}")
    x = xs
    p = 0
    for layer in model.architecture.layers:
        if isinstance(layer, Conv2D):
            x = _conv2d(x, model.weights[p], model.biases[p], layer.stride, layer.padding)
            p += 1
        elif isinstance(layer, Dense):
            x = x @ model.weights[p].T + model.biases[p]
            p += 1
        elif isinstance(layer, ReLU):
            x = np.maximum(x, 0.0)
        elif isinstance(layer, MaxPool):
            x = _maxpool(x, layer.window)
        else:  # Flatten
            x = x.reshape(len(x), -1)
    return x


def forward(model: FloatModel, x) -> np.ndarray:
    """Logits for a single input."""
    return forward_batch(model, np.asarray(x, dtype=np.float64)[None])[0]


def accuracy(model: FloatModel, data: Dataset) -> float:
    """Top-1 accuracy; argmax ties break to the lowest class index."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    preds = np.argmax(forward_batch(model, data.inputs), axis=1)
    return float(np.mean(preds == data.labels))


# ---------------------------------------------------------------- file formats

_LAYER_NAMES = {Conv2D: "conv2d", Dense: "dense", ReLU: "relu", MaxPool: "maxpool", Flatten: "flatten"}


def arch_header_lines(arch: Architecture):
    lines = ["input_shape " + " ".join(str(d) for d in arch.input_shape),
             f"classes {arch.num_classes}"]
    for layer in arch.layers:
        name = _LAYER_NAMES[type(layer)]
        if isinstance(layer, Conv2D):
            lines.append(f"layer {name} {layer.c_in} {layer.c_out} {layer.kernel} {layer.stride} {layer.padding}")
        elif isinstance(layer, Dense):
            lines.append(f"layer {name} {layer.in_features} {layer.out_features}")
        elif isinstance(layer, MaxPool):
            lines.append(f"layer {name} {layer.window}")
        else:
            lines.append(f"layer {name}")
    return lines


def parse_arch_header(lines) -> Architecture:
    input_shape = None
    classes = None
    layers = []
    for i, line in enumerate(lines, start=2):  # header body starts at file line 2
        tok = line.split()
        try:
            if tok[0] == "input_shape":
                input_shape = tuple(int(t) for t in tok[1:])
            elif tok[0] == "classes":
                classes = int(tok[1])
            elif tok[0] == "layer":
                kind = tok[1]
                args = [int(t) for t in tok[2:]]
                if kind == "conv2d":
                    layers.append(Conv2D(*args))
                elif kind == "dense":
                    layers.append(Dense(*args))
                elif kind == "relu":
                    layers.append(ReLU())
                elif kind == "maxpool":
                    layers.append(MaxPool(*args))
                elif kind == "flatten":
                    layers.append(Flatten())
                else:
                    raise ModelFormatError(f"line {i}: unknown layer kind {kind!r}")
            else:
                raise ModelFormatError(f"line {i}: unknown header field {tok[0]!r}")
        except (ValueError, TypeError, IndexError) as e:
            raise ModelFormatError(f"line {i}: malformed header line {line!r}") from e
    if input_shape is None or classes is None:
        raise ModelFormatError("header missing input_shape or classes")
    try:
        return Architecture(tuple(layers), input_shape, classes)
    except ValueError as e:
        raise ModelFormatError(f"header: inconsistent architecture: {e}") from e


def _split_header(blob, path, magic):
    end = blob.find(_END_HEADER)
    if end < 0:
        raise ModelFormatError(f"{path}: missing end-header marker")
    lines = blob[:end].decode("utf-8").splitlines()
    if not lines or lines[0] != magic:
        raise ModelFormatError(f"{path} line 1: expected magic {magic!r}")
    return lines[1:], blob[end + len(_END_HEADER):]


def _pack_tensor(a, dtype):
    out = struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return out + np.ascontiguousarray(a, dtype=dtype).tobytes()


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ModelFormatError(f"{self.path}: truncated payload at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def tensor(self, dtype, expect_shape=None):
        ndim, = struct.unpack("<I", self.take(4))
        shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        if expect_shape is not None and shape != expect_shape:
            raise ModelFormatError(f"{self.path} byte {self.pos}: tensor shape {shape} != expected {expect_shape}")
        n = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(self.take(n * np.dtype(dtype).itemsize), dtype=dtype)
        return a.reshape(shape).astype(np.float64) if np.issubdtype(dtype, np.floating) else a.reshape(shape)

    def done(self):
        if self.pos != len(self.buf):
            raise ModelFormatError(f"{self.path}: {len(self.buf) - self.pos} trailing bytes")


def save_model(model: FloatModel, path):
    header = "\n".join([MODEL_MAGIC] + arch_header_lines(model.architecture)) + "\n"
    payload = b""
    for w, b in zip(model.weights, model.biases):
        payload += _pack_tensor(w, "<f4") + _pack_tensor(b, "<f4")
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + _END_HEADER + payload)


def load_model(path) -> FloatModel:
    with open(path, "rb") as f:
        blob = f.read()
    lines, payload = _split_header(blob, path, MODEL_MAGIC)
    arch = parse_arch_header(lines)
    r = _Reader(payload, path)
    ws, bs = [], []
    for _, layer in arch.parametric_layers():
        ws.append(r.tensor("<f4", weight_shape(layer)))
        bs.append(r.tensor("<f4", (filter_count(layer),)))
    r.done()
    return FloatModel(arch, ws, bs)


def save_dataset(data: Dataset, path):
    shape = data.inputs.shape[1:]
    classes = int(data.labels.max()) + 1 if len(data) else 0
    header = "\n".join([DATA_MAGIC,
                        "shape " + " ".join(str(d) for d in shape),
                        f"classes {classes}",
                        f"samples {len(data)}"]) + "\n"
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + _END_HEADER)
        f.write(np.ascontiguousarray(data.inputs, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(data.labels, dtype=np.uint8).tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        blob = f.read()
    lines, payload = _split_header(blob, path, DATA_MAGIC)
    fields = {}
    for i, line in enumerate(lines, start=2):
        tok = line.split()
        if not tok or tok[0] not in ("shape", "classes", "samples"):
            raise ModelFormatError(f"{path} line {i}: unknown field {line!r}")
        fields[tok[0]] = [int(t) for t in tok[1:]]
    try:
        shape = tuple(fields["shape"])
        n = fields["samples"][0]
    except KeyError as e:
        raise ModelFormatError(f"{path}: missing header field {e}") from e
    r = _Reader(payload, path)
    size = int(np.prod(shape))
    inputs = np.frombuffer(r.take(4 * n * size), dtype="<f4").reshape((n,) + shape)
    labels = np.frombuffer(r.take(n), dtype=np.uint8)
    r.done()
    return Dataset(inputs, labels)
