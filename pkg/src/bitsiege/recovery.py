"""Simulated partial parameter extraction: per-bit Bernoulli exposure of weight codes."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model import ModelFormatError, _END_HEADER, _Reader, _split_header, arch_header_lines, \
    filter_count, parse_arch_header, weight_shape
from .quantize import BITWIDTHS, QuantModel, QuantParams, codes_to_bits

PARTIAL_MAGIC = "bitsiege-partial-v1"


@dataclass(frozen=True)
class PartialModel:
    """Attacker's view: recovered bit patterns plus a per-bit known-mask.

    code_bits holds raw unsigned nq-bit patterns with unrecovered positions
    zeroed; they carry no information until reconstruction. masks hold the
    per-bit recovery flags in the low nq bits of each byte.
    """
    architecture: object
    params: list
    code_bits: list  # uint8 arrays, weight-tensor shaped
    masks: list      # uint8 arrays, weight-tensor shaped

    biases: list

    def __post_init__(self):
        layers = self.architecture.parametric_layers()
        cbs, mks = [], []
        for (_, layer), qp, cb, mk in zip(layers, self.params, self.code_bits, self.masks):
            full = (1 << qp.bitwidth) - 1
            cb = np.array(cb, dtype=np.uint8, order="C", copy=True)
            mk = np.array(mk, dtype=np.uint8, order="C", copy=True)
            if cb.shape != weight_shape(layer) or mk.shape != weight_shape(layer):
                raise ValueError("code_bits/mask shape must mirror the weight tensor")
            if (mk & ~np.uint8(full)).any() or (cb & ~mk).any():
                raise ValueError("bits set outside the mask or the bitwidth")
            cb.flags.writeable = False
            mk.flags.writeable = False
            cbs.append(cb)
            mks.append(mk)
        object.__setattr__(self, "code_bits", cbs)
        object.__setattr__(self, "masks", mks)


def simulate_recovery(victim: QuantModel, rp: float, seed: int) -> PartialModel:
    """Mark each weight bit recovered i.i.d. with probability rp (numpy PCG64 stream).

    Architecture and scales are copied verbatim: architecture extraction is
    assumed exact and quantization metadata known to the attacker.
    """
    if not 0.0 <= rp <= 1.0:
        raise ValueError(f"recovery rate {rp} outside [0,1]")
    rng = np.random.default_rng(seed)
    code_bits, masks = [], []
    for c, qp in zip(victim.codes, victim.params):
        mask = np.zeros(c.shape, dtype=np.uint8)
        for p in range(qp.bitwidth):
            mask |= (rng.random(c.shape) < rp).astype(np.uint8) << p
        code_bits.append(codes_to_bits(c, qp.bitwidth) & mask)
        masks.append(mask)
    return PartialModel(victim.architecture, list(victim.params), code_bits, masks,
                        [b.copy() for b in victim.biases])


def actual_recovery_rate(p: PartialModel) -> float:
    recovered = sum(int(np.unpackbits(m).sum()) for m in p.masks)
    total = sum(m.size * qp.bitwidth for m, qp in zip(p.masks, p.params))
    return recovered / total


def save_partial(p: PartialModel, path):
    header = "\n".join([PARTIAL_MAGIC] + arch_header_lines(p.architecture)) + "\n"
    payload = b""
    for qp, cb, mk, b in zip(p.params, p.code_bits, p.masks, p.biases):
        payload += struct.pack("<B", qp.bitwidth) + struct.pack("<d", qp.scale)
        payload += cb.tobytes()
        payload += np.ascontiguousarray(b, dtype="<f4").tobytes()
        payload += mk.tobytes()
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + _END_HEADER + payload)


def load_partial(path) -> PartialModel:
    with open(path, "rb") as f:
        blob = f.read()
    lines, payload = _split_header(blob, path, PARTIAL_MAGIC)
    arch = parse_arch_header(lines)
    r = _Reader(payload, path)
    params, code_bits, masks, biases = [], [], [], []
    for _, layer in arch.parametric_layers():
        nq, = struct.unpack("<B", r.take(1))
        if nq not in BITWIDTHS:
            raise ModelFormatError(f"{r.path} byte {r.pos}: bad bitwidth {nq}")
        scale, = struct.unpack("<d", r.take(8))
        n = int(np.prod(weight_shape(layer)))
        cb = np.frombuffer(r.take(n), dtype=np.uint8).reshape(weight_shape(layer))
        bias = np.frombuffer(r.take(4 * filter_count(layer)), dtype="<f4").astype(np.float64)
        mk = np.frombuffer(r.take(n), dtype=np.uint8).reshape(weight_shape(layer))
        params.append(QuantParams(nq, scale))
        code_bits.append(cb)
        masks.append(mk)
        biases.append(bias)
    r.done()
    return PartialModel(arch, params, code_bits, masks, biases)
