"""Fill unrecovered weight bits: closer-to-zero, all-zeros, all-ones, plus a brute-force oracle."""
from __future__ import annotations

from enum import Enum

import numpy as np

from .quantize import QuantModel, bits_to_codes
from .recovery import PartialModel


class ReconstructionMethod(Enum):
    CZR = "czr"
    ALL_ZEROS = "allzeros"
    ALL_ONES = "allones"


def _reconstruct_bits(bits, mask, nq, method):
    """Vectorized completion of raw bit patterns; returns signed code array."""
    bits = np.asarray(bits, dtype=np.uint8)
    mask = np.asarray(mask, dtype=np.uint8)
    full = np.uint8((1 << nq) - 1)
    known = bits & mask
    unknown = ~mask & full
    if method is ReconstructionMethod.ALL_ZEROS:
        return bits_to_codes(known, nq)
    if method is ReconstructionMethod.ALL_ONES:
        return bits_to_codes(known | unknown, nq)
    # CZR: sign known -> fill toward zero for that sign; sign unknown -> pick the
    # smaller-|value| of the two sign hypotheses, non-negative on a tie.
    sign_bit = np.uint8(1 << (nq - 1))
    sign_known = (mask & sign_bit) != 0
    negative = (known & sign_bit) != 0
    filled = np.where(negative, known | unknown, known)
    cand_pos = bits_to_codes(known, nq)             # sign bit unknown -> 0
    cand_neg = bits_to_codes(known | unknown, nq)   # sign bit unknown -> 1
    pick_neg = np.abs(cand_neg) < np.abs(cand_pos)
    unknown_sign = np.where(pick_neg, cand_neg, cand_pos)
    return np.where(sign_known, bits_to_codes(filled, nq), unknown_sign).astype(np.int16)


def reconstruct_code(bits: int, mask: int, nq: int, method: ReconstructionMethod) -> int:
    """Complete one partial nq-bit code; recovered bits are preserved verbatim."""
    return int(_reconstruct_bits(np.uint8(bits), np.uint8(mask), nq, method))


def reconstruct_model(p: PartialModel, method: ReconstructionMethod) -> QuantModel:
    codes = [_reconstruct_bits(cb, mk, qp.bitwidth, method)
             for cb, mk, qp in zip(p.code_bits, p.masks, p.params)]
    return QuantModel(p.architecture, list(p.params), codes, [b.copy() for b in p.biases])


def oracle_min_abs(bits: int, mask: int, nq: int) -> int:
    """Exhaustive argmin-|value| completion of a partial code (test oracle).

    Ties break toward the non-negative value, then the smaller bit pattern.
    """
    full = (1 << nq) - 1
    known = bits & mask & full
    free = [p for p in range(nq) if not (mask >> p) & 1]
    best = None
    for combo in range(1 << len(free)):
        pat = known
        for j, p in enumerate(free):
            if (combo >> j) & 1:
                pat |= 1 << p
        val = pat - (1 << nq) if pat >= 1 << (nq - 1) else pat
        key = (abs(val), val < 0, pat)
        if best is None or key < best[0]:
            best = (key, val)
    return best[1]
