"""Vulnerable-bit ranking (normalized filter L2), baselines, flip injection, full pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Dataset, ModelFormatError, accuracy, filter_count, filter_size
from .quantize import QuantModel, accuracy_quant, dequantize_model, flip_bit
from .reconstruct import ReconstructionMethod, reconstruct_model
from .recovery import simulate_recovery

TRACE_MAGIC = "bitsiege-trace-v1"


@dataclass(frozen=True)
class FlipRecord:
    layer: int   # index into parametric layers
    filt: int    # conv: output channel; dense: output row
    weight: int  # flattened (c, k1, k2) index within the filter
    bit: int


@dataclass(frozen=True)
class FL2R:
    name = "fl2r"


@dataclass(frozen=True)
class RandomBits:
    seed: int
    name = "random"


@dataclass(frozen=True)
class GradientBaseline:
    batch_size: int
    name = "gradient"


@dataclass(frozen=True)
class AttackTrace:
    records: tuple
    accuracies: tuple  # length len(records)+1, baseline first
    config: dict

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "accuracies", tuple(float(a) for a in self.accuracies))
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracy outside [0,1]")


def filter_l2(weights) -> float:
    """Frobenius norm over one filter's (dequantized) weights."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise ValueError("empty filter")
    return float(np.sqrt(np.sum(w * w)))


def filter_importance(weights) -> float:
    """L2 norm normalized by the filter's element count (C_in*K*K, or in_features)."""
    w = np.asarray(weights, dtype=np.float64)
    return filter_l2(w) / w.size


def _filter_matrices(model: QuantModel):
    """Per layer: (n_filters, filter_size) views of codes and dequantized weights."""
    out = []
    for (_, layer), c, qp in zip(model.architecture.parametric_layers(), model.codes, model.params):
        flat = c.reshape(filter_count(layer), filter_size(layer))
        out.append((flat, qp))
    return out


def _check_nbf(model, n_bf):
    total = sum(c.size for c in model.codes)
    if not 1 <= n_bf <= total:
        raise ValueError(f"n_bf must be in [1, {total}], got {n_bf}")


def select_vulnerable_bits(model: QuantModel, n_bf: int):
    """Greedy magnitude ranking: repeatedly take the top-importance filter's largest
    remaining weight, record its sign bit, flip it in the working copy, rescore.

    Ties break to the lowest (layer, filter), then lowest weight index. A weight
    already selected is excluded from later inner argmaxes, so the output never
    repeats a (weight, bit) pair.
    """
    _check_nbf(model, n_bf)
    layers = []
    for codes, qp in _filter_matrices(model):
        codes = codes.copy()
        deq = codes.astype(np.float64) * qp.scale
        imp = np.linalg.norm(deq, axis=1) / deq.shape[1]
        taken = np.zeros(codes.shape, dtype=bool)
        layers.append([codes, deq, imp, taken, qp])
    records = []
    for _ in range(n_bf):
        best_l, best_f, best_v = -1, -1, -np.inf
        for l, (codes, deq, imp, taken, qp) in enumerate(layers):
            eff = np.where(taken.all(axis=1), -np.inf, imp)
            f = int(np.argmax(eff))
            if eff[f] > best_v:
                best_l, best_f, best_v = l, f, eff[f]
        codes, deq, imp, taken, qp = layers[best_l]
        sq = np.where(taken[best_f], -np.inf, deq[best_f] ** 2)
        w = int(np.argmax(sq))
        records.append(FlipRecord(best_l, best_f, w, qp.bitwidth - 1))
        taken[best_f, w] = True
        codes[best_f, w] = flip_bit(int(codes[best_f, w]), qp.bitwidth - 1, qp.bitwidth)
        deq[best_f, w] = codes[best_f, w] * qp.scale
        imp[best_f] = np.linalg.norm(deq[best_f]) / deq.shape[1]
    return records


def select_random_bits(model: QuantModel, n_bf: int, seed: int):
    """Uniform (weight, bit) pairs without replacement across all parametric layers."""
    _check_nbf(model, n_bf)
    sizes = [(c.size, qp.bitwidth) for c, qp in zip(model.codes, model.params)]
    total_pairs = sum(n * nq for n, nq in sizes)
    if n_bf > total_pairs:
        raise ValueError("n_bf exceeds the number of (weight, bit) pairs")
    rng = np.random.default_rng(seed)
    picks = rng.choice(total_pairs, size=n_bf, replace=False)
    layer_info = [(filter_size(layer), qp.bitwidth)
                  for (_, layer), qp in zip(model.architecture.parametric_layers(), model.params)]
    records = []
    for idx in picks:
        idx = int(idx)
        for l, (n, nq) in enumerate(sizes):
            if idx < n * nq:
                fs, _ = layer_info[l]
                records.append(FlipRecord(l, (idx // nq) // fs, (idx // nq) % fs, idx % nq))
                break
            idx -= n * nq
    return records


def select_gradient_bits(reconstructed: QuantModel, batch: Dataset, n_bf: int):
    """Single-shot gradient baseline: rank weights by |dLoss/dw| on the surrogate
    and flip the sign bit only when the flip moves the weight up the loss gradient.
    """
    from .synth import gradient
    _check_nbf(reconstructed, n_bf)
    if len(batch) == 0:
        raise ValueError("empty batch")
    fm = dequantize_model(reconstructed)
    grads, _ = gradient(fm, batch.inputs, batch.labels)
    ranked = []
    for l, g in enumerate(grads):
        flat = g.reshape(-1)
        for i in np.argsort(-np.abs(flat), kind="stable"):
            ranked.append((float(np.abs(flat[i])), l, int(i), float(flat[i])))
    ranked.sort(key=lambda t: (-t[0], t[1], t[2]))
    records = []
    for _, l, i, g in ranked:
        if len(records) == n_bf:
            break
        qp = reconstructed.params[l]
        c = int(reconstructed.codes[l].reshape(-1)[i])
        delta = (-(1 << (qp.bitwidth - 1)) if c >= 0 else (1 << (qp.bitwidth - 1))) * qp.scale
        if delta * g > 0:  # loss increases to first order
            fs = filter_size(reconstructed.architecture.parametric_layers()[l][1])
            records.append(FlipRecord(l, i // fs, i % fs, qp.bitwidth - 1))
    if len(records) < n_bf:
        raise ValueError(f"only {len(records)} gradient-aligned sign flips available")
    return records


def apply_flips(victim: QuantModel, records) -> QuantModel:
    """XOR the named bits into a copy of the victim's true codes."""
    codes = [c.copy() for c in victim.codes]
    layers = victim.architecture.parametric_layers()
    for r in records:
        if not 0 <= r.layer < len(codes):
            raise ValueError(f"bad layer index {r.layer}")
        _, layer = layers[r.layer]
        qp = victim.params[r.layer]
        if not (0 <= r.filt < filter_count(layer) and 0 <= r.weight < filter_size(layer)):
            raise ValueError(f"bad filter/weight index in {r}")
        flat = codes[r.layer].reshape(-1)
        idx = r.filt * filter_size(layer) + r.weight
        flat[idx] = flip_bit(int(flat[idx]), r.bit, qp.bitwidth)
    return QuantModel(victim.architecture, list(victim.params), codes,
                      [b.copy() for b in victim.biases])


def _rank(method, surrogate, n_bf, eval_data):
    if isinstance(method, FL2R):
        return select_vulnerable_bits(surrogate, n_bf)
    if isinstance(method, RandomBits):
        return select_random_bits(surrogate, n_bf, method.seed)
    if isinstance(method, GradientBaseline):
        batch = Dataset(eval_data.inputs[:method.batch_size], eval_data.labels[:method.batch_size])
        return select_gradient_bits(surrogate, batch, n_bf)
    raise TypeError(f"unknown ranking method {method!r}")


def run_attack(victim: QuantModel, rp: float, seed: int, ranking, recon: ReconstructionMethod,
               n_bf: int, eval_data: Dataset) -> AttackTrace:
    """Full pipeline: simulate extraction, reconstruct a surrogate, rank on the
    surrogate only, then flip cumulatively on the victim, recording accuracy.
    """
    partial = simulate_recovery(victim, rp, seed)
    surrogate = reconstruct_model(partial, recon)
    records = _rank(ranking, surrogate, n_bf, eval_data)
    accs = [accuracy_quant(victim, eval_data)]
    current = victim
    for r in records:
        current = apply_flips(current, [r])
        accs.append(accuracy_quant(current, eval_data))
    nq = victim.params[0].bitwidth if victim.params else 0
    config = {"rp": rp, "seed": seed, "ranking": ranking.name, "recon": recon.value,
              "nq": nq, "nbf": n_bf}
    return AttackTrace(tuple(records), tuple(accs), config)


def save_trace(trace: AttackTrace, path):
    lines = [TRACE_MAGIC]
    cfg = trace.config
    lines.append(f"nq {cfg['nq']}")
    lines.append(f"rp {cfg['rp']!r}")
    lines.append(f"seed {cfg['seed']}")
    lines.append(f"ranking {cfg['ranking']}")
    lines.append(f"recon {cfg['recon']}")
    lines.append(f"nbf {cfg['nbf']}")
    for r in trace.records:
        lines.append(f"flip {r.layer} {r.filt} {r.weight} {r.bit}")
    for a in trace.accuracies:
        lines.append(f"acc {a!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_trace(path) -> AttackTrace:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != TRACE_MAGIC:
        raise ModelFormatError(f"{path} line 1: expected magic {TRACE_MAGIC!r}")
    cfg, records, accs = {}, [], []
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split()
        try:
            if tok[0] == "flip":
                records.append(FlipRecord(*(int(t) for t in tok[1:5])))
            elif tok[0] == "acc":
                accs.append(float(tok[1]))
            elif tok[0] in ("nq", "seed", "nbf"):
                cfg[tok[0]] = int(tok[1])
            elif tok[0] == "rp":
                cfg["rp"] = float(tok[1])
            elif tok[0] in ("ranking", "recon"):
                cfg[tok[0]] = tok[1]
            else:
                raise ModelFormatError(f"{path} line {i}: unknown field {tok[0]!r}")
        except (ValueError, IndexError) as e:
            raise ModelFormatError(f"{path} line {i}: malformed line {line!r}") from e
    return AttackTrace(tuple(records), tuple(accs), cfg)
