"""Layer-wise symmetric uniform quantization and two's-complement bit algebra."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .model import (Architecture, FloatModel, ModelFormatError, _Reader, _END_HEADER,
                    arch_header_lines, filter_count, parse_arch_header, weight_shape,
                    _split_header)

QMODEL_MAGIC = "bitsiege-qmodel-v1"
BITWIDTHS = (4, 6, 8)


def code_range(nq):
    return -(1 << (nq - 1)), (1 << (nq - 1)) - 1


def compute_scale(weights, nq) -> float:
    """Symmetric scale: max|w| / (2^(nq-1)-1), or 1.0 for an all-zero layer."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise ValueError("empty weight tensor")
    if np.isnan(w).any():
        raise ValueError("NaN in weights")
    top = float(np.max(np.abs(w)))
    return top / ((1 << (nq - 1)) - 1) if top > 0 else 1.0


def _round_away(x):
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def quantize(w, s, nq):
    """Real weight(s) -> nq-bit two's-complement code(s), clamped to range."""
    if s <= 0:
        raise ValueError("scale must be positive")
    lo, hi = code_range(nq)
    c = np.clip(_round_away(np.asarray(w, dtype=np.float64) / s), lo, hi)
    return c.astype(np.int16) if c.ndim else int(c)


def dequantize(c, s):
    return np.asarray(c, dtype=np.float64) * s if np.ndim(c) else float(c) * s


def flip_bit(c: int, p: int, nq: int) -> int:
    """Toggle bit p (0 = LSB, nq-1 = sign) of an nq-bit two's-complement code."""
    if not 0 <= p < nq:
        raise ValueError(f"bit position {p} out of range for {nq}-bit code")
    lo, hi = code_range(nq)
    if not lo <= c <= hi:
        raise ValueError(f"code {c} out of {nq}-bit range")
    u = (c & ((1 << nq) - 1)) ^ (1 << p)
    return u - (1 << nq) if u >= 1 << (nq - 1) else u


def codes_to_bits(codes, nq):
    """Signed code array -> raw unsigned nq-bit patterns (uint8)."""
    return (np.asarray(codes, dtype=np.int16) & ((1 << nq) - 1)).astype(np.uint8)


def bits_to_codes(bits, nq):
    """Raw unsigned nq-bit patterns -> signed code array (int16)."""
    u = np.asarray(bits, dtype=np.int16) & ((1 << nq) - 1)
    return np.where(u >= 1 << (nq - 1), u - (1 << nq), u).astype(np.int16)


@dataclass(frozen=True)
class QuantParams:
    bitwidth: int
    scale: float

    def __post_init__(self):
        if self.bitwidth not in BITWIDTHS:
            raise ValueError(f"bitwidth must be one of {BITWIDTHS}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")


@dataclass(frozen=True)
class QuantModel:
    architecture: Architecture
    params: list  # QuantParams per parametric layer
    codes: list   # int16 array per parametric layer, same shape as float weights
    biases: list  # float biases carried through, never quantized

    def __post_init__(self):
        layers = self.architecture.parametric_layers()
        if not len(self.params) == len(self.codes) == len(self.biases) == len(layers):
            raise ValueError("params/codes/biases must match parametric layer count")
        cs, bs = [], []
        for (_, layer), qp, c, b in zip(layers, self.params, self.codes, self.biases):
            c = np.array(c, dtype=np.int16, order="C", copy=True)
            if c.shape != weight_shape(layer):
                raise ValueError(f"code shape {c.shape} != {weight_shape(layer)}")
            lo, hi = code_range(qp.bitwidth)
            if c.min(initial=0) < lo or c.max(initial=0) > hi:
                raise ValueError(f"code outside {qp.bitwidth}-bit range")
            c.flags.writeable = False
            b = np.array(b, dtype=np.float64, order="C", copy=True)
            b.flags.writeable = False
            cs.append(c)
            bs.append(b)
        object.__setattr__(self, "codes", cs)
        object.__setattr__(self, "biases", bs)


def quantize_model(m: FloatModel, nq: int) -> QuantModel:
    params, codes = [], []
    for w in m.weights:
        s = compute_scale(w, nq)
        params.append(QuantParams(nq, s))
        codes.append(quantize(w, s, nq))
    return QuantModel(m.architecture, params, codes, [b.copy() for b in m.biases])


def dequantize_model(q: QuantModel) -> FloatModel:
    ws = [dequantize(c, qp.scale) for c, qp in zip(q.codes, q.params)]
    return FloatModel(q.architecture, ws, [b.copy() for b in q.biases])


def forward_quant(q: QuantModel, x):
    from .model import forward
    return forward(dequantize_model(q), x)


def accuracy_quant(q: QuantModel, data) -> float:
    from .model import accuracy
    return accuracy(dequantize_model(q), data)


def total_weight_bits(q: QuantModel) -> int:
    return sum(c.size * qp.bitwidth for c, qp in zip(q.codes, q.params))


def save_qmodel(q: QuantModel, path):
    header = "\n".join([QMODEL_MAGIC] + arch_header_lines(q.architecture)) + "\n"
    payload = b""
    for c, qp, b in zip(q.codes, q.params, q.biases):
        payload += struct.pack("<B", qp.bitwidth) + struct.pack("<d", qp.scale)
        payload += c.astype(np.int8).tobytes()  # sign-extended, one code per byte
        payload += np.ascontiguousarray(b, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + _END_HEADER + payload)


def _read_qlayer(r, layer):
    nq, = struct.unpack("<B", r.take(1))
    if nq not in BITWIDTHS:
        raise ModelFormatError(f"{r.path} byte {r.pos}: bad bitwidth {nq}")
    scale, = struct.unpack("<d", r.take(8))
    n = int(np.prod(weight_shape(layer)))
    codes = np.frombuffer(r.take(n), dtype=np.int8).astype(np.int16).reshape(weight_shape(layer))
    bias = np.frombuffer(r.take(4 * filter_count(layer)), dtype="<f4").astype(np.float64)
    return QuantParams(nq, scale), codes, bias


def load_qmodel(path) -> QuantModel:
    with open(path, "rb") as f:
        blob = f.read()
    lines, payload = _split_header(blob, path, QMODEL_MAGIC)
    arch = parse_arch_header(lines)
    r = _Reader(payload, path)
    params, codes, biases = [], [], []
    for _, layer in arch.parametric_layers():
        qp, c, b = _read_qlayer(r, layer)
        params.append(qp)
        codes.append(c)
        biases.append(b)
    r.done()
    return QuantModel(arch, params, codes, biases)
