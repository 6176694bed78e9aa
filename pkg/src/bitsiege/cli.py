"""Experiment runner CLI: train, quantize, attack, sweep, report, verify."""
from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import multiprocessing
import os
import sys

import numpy as np

from . import synth
from .attack import FL2R, GradientBaseline, RandomBits, load_trace, run_attack, save_trace
from .model import ModelFormatError, accuracy, load_dataset, load_model, save_dataset, save_model
from .quantize import flip_bit, quantize_model
from .reconstruct import ReconstructionMethod, oracle_min_abs, reconstruct_code
from .recovery import simulate_recovery

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3

_RANKINGS = ("fl2r", "random", "gradient")
_RECONS = {m.value: m for m in ReconstructionMethod}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def parse_config(path):
    """key = value [value ...] lines; '#' starts a comment."""
    cfg = {}
    with open(path, encoding="utf-8") as f:
        for i, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise _UsageError(f"{path} line {i}: expected 'key = value'")
            key, _, val = line.partition("=")
            cfg[key.strip()] = val.split()
    return cfg


def _one(cfg, key, cast=str, default=None):
    if key not in cfg:
        if default is not None:
            return default
        raise _UsageError(f"config missing key {key!r}")
    return cast(cfg[key][0])


def _many(cfg, key, cast=str):
    if key not in cfg or not cfg[key]:
        raise _UsageError(f"config missing list {key!r}")
    return [cast(v) for v in cfg[key]]


def _ranking_method(name, seed, batch):
    if name == "fl2r":
        return FL2R()
    if name == "random":
        return RandomBits(seed)
    if name == "gradient":
        return GradientBaseline(batch)
    raise _UsageError(f"unknown ranking {name!r}; choose from {_RANKINGS}")


def cmd_train(args):
    cfg = parse_config(args.config)
    spec = synth.SynthSpec(
        classes=_one(cfg, "classes", int, 4),
        per_class=_one(cfg, "per_class", int, 200),
        test_per_class=_one(cfg, "test_per_class", int, 50),
        input_shape=tuple(_many(cfg, "input_shape", int)) if "input_shape" in cfg else (1, 8, 8),
        noise=_one(cfg, "noise", float, 0.5),
        seed=_one(cfg, "data_seed", int, 7))
    tc = synth.TrainConfig(
        epochs=_one(cfg, "epochs", int, 30),
        lr=_one(cfg, "lr", float, 0.1),
        batch_size=_one(cfg, "batch", int, 32),
        seed=_one(cfg, "train_seed", int, 2))
    train_ds, test_ds = synth.gen_synthetic(spec)
    arch = synth.desk_architecture(spec.classes, spec.input_shape)
    model = synth.train(arch, train_ds, tc)
    os.makedirs(args.out, exist_ok=True)
    save_model(model, os.path.join(args.out, "victim.model"))
    save_dataset(train_ds, os.path.join(args.out, "train.data"))
    save_dataset(test_ds, os.path.join(args.out, "test.data"))
    print(f"train accuracy {accuracy(model, train_ds):.4f}")
    print(f"test accuracy  {accuracy(model, test_ds):.4f}")
    return EXIT_OK


def cmd_quantize(args):
    model = load_model(args.model)
    from .quantize import save_qmodel
    save_qmodel(quantize_model(model, args.nq), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _run_one(victim_path, eval_path, nq, rp, seed, ranking, recon, nbf, batch):
    victim = quantize_model(load_model(victim_path), nq)
    eval_ds = load_dataset(eval_path)
    method = _ranking_method(ranking, seed, batch)
    return run_attack(victim, rp, seed, method, _RECONS[recon], nbf, eval_ds)


def cmd_attack(args):
    cfg = parse_config(args.config)
    trace = _run_one(_one(cfg, "victim"), _one(cfg, "eval"), _one(cfg, "nq", int),
                     _one(cfg, "rp", float), _one(cfg, "seeds", int, 0),
                     _one(cfg, "ranking"), _one(cfg, "recon"), _one(cfg, "nbf", int),
                     _one(cfg, "batch", int, 32))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"trace_{_cfg_hash(trace.config)}.trace")
    save_trace(trace, path)
    print(f"wrote {path} (final accuracy {trace.accuracies[-1]:.4f})")
    return EXIT_OK


def _cfg_hash(cfg):
    text = "|".join(f"{k}={cfg[k]!r}" for k in sorted(cfg))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _sweep_worker(job):
    return _run_one(*job)


def cmd_sweep(args):
    cfg = parse_config(args.config)
    victim_path = _one(cfg, "victim")
    eval_path = _one(cfg, "eval")
    nbf = _one(cfg, "nbf", int)
    batch = _one(cfg, "batch", int, 32)
    nqs = _many(cfg, "nq", int)
    rps = _many(cfg, "rp", float)
    seeds = _many(cfg, "seeds", int)
    if args.seed_base is not None:
        seeds = [args.seed_base + i for i in range(len(seeds))]
    rankings = _many(cfg, "ranking")
    recons = _many(cfg, "recon")
    for r in rankings:
        if r not in _RANKINGS:
            raise _UsageError(f"unknown ranking {r!r}")
    for r in recons:
        if r not in _RECONS:
            raise _UsageError(f"unknown reconstruction {r!r}")
    axes = list(itertools.product(nqs, rps, seeds, rankings, recons))
    jobs = [(victim_path, eval_path, nq, rp, seed, rk, rc, nbf, batch)
            for nq, rp, seed, rk, rc in axes]
    if args.jobs > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            traces = pool.map(_sweep_worker, jobs)
    else:
        traces = [_sweep_worker(j) for j in jobs]
    os.makedirs(args.out, exist_ok=True)
    for trace in traces:
        save_trace(trace, os.path.join(args.out, f"trace_{_cfg_hash(trace.config)}.trace"))
    _write_csv(traces, os.path.join(args.out, "results.csv"))
    print(f"wrote {len(traces)} traces + results.csv to {args.out}")
    return EXIT_OK


def _write_csv(traces, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["nq", "rp", "seed", "ranking", "recon", "flip_index", "accuracy"])
        for t in traces:
            c = t.config
            for i, a in enumerate(t.accuracies):
                w.writerow([c["nq"], repr(c["rp"]), c["seed"], c["ranking"], c["recon"], i, repr(a)])


def cmd_report(args):
    names = sorted(n for n in os.listdir(args.results) if n.endswith(".trace"))
    if not names:
        raise _UsageError(f"no .trace files in {args.results}")
    traces = [load_trace(os.path.join(args.results, n)) for n in names]
    traces.sort(key=lambda t: (t.config["nq"], t.config["rp"], t.config["ranking"],
                               t.config["recon"], t.config["seed"]))
    out = args.out or args.results
    os.makedirs(out, exist_ok=True)
    _write_csv(traces, os.path.join(out, "report.csv"))
    groups = {}
    for t in traces:
        c = t.config
        groups.setdefault((c["nq"], c["rp"], c["ranking"], c["recon"]), []).append(t)
    with open(os.path.join(out, "summary.csv"), "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["nq", "rp", "ranking", "recon", "flips", "mean_accuracy"])
        for key in sorted(groups):
            ts = groups[key]
            for flips in (0, 10, 20, 50, 100):
                if flips < len(ts[0].accuracies):
                    mean = float(np.mean([t.accuracies[flips] for t in ts]))
                    w.writerow([*key, flips, repr(mean)])
    print(f"wrote report.csv and summary.csv to {out}")
    return EXIT_OK


def _verify_czr():
    for nq in (4, 8):
        for mask in range(1 << nq):
            for bits in range(1 << nq):
                got = reconstruct_code(bits & mask, mask, nq, ReconstructionMethod.CZR)
                if got != oracle_min_abs(bits, mask, nq):
                    return False, f"CZR mismatch at nq={nq} bits={bits:08b} mask={mask:08b}"
    return True, "closer-to-zero completion matches exhaustive oracle (4-bit and 8-bit, all pairs)"


def _verify_sign_flip():
    for nq in (4, 6, 8):
        half, quarter = 1 << (nq - 1), 1 << (nq - 3)
        for c in range(-half, half):
            if abs(flip_bit(c, nq - 1, nq) - c) != half:
                return False, f"sign-flip delta wrong at nq={nq} c={c}"
            if half - quarter <= c <= half - 1 and abs(flip_bit(c, nq - 1, nq)) > quarter:
                return False, f"top-quartile code {c} not mapped near zero at nq={nq}"
    return True, "sign-bit flips shift every code by exactly half-range (4/6/8-bit, exhaustive)"


def _verify_gradient():
    from .model import Architecture, Conv2D, Dense, Flatten, FloatModel, MaxPool, ReLU, \
        filter_count, weight_shape
    rng = np.random.default_rng(5)
    arch = Architecture((Conv2D(1, 2, 3), ReLU(), MaxPool(2), Conv2D(2, 3, 3), ReLU(),
                         Flatten(), Dense(3, 3)), (1, 8, 8), 3)
    ws = [rng.standard_normal(weight_shape(l)) * 0.5 for _, l in arch.parametric_layers()]
    bsz = [rng.standard_normal(filter_count(l)) * 0.1 for _, l in arch.parametric_layers()]
    inputs = rng.standard_normal((4, 1, 8, 8))
    labels = np.array([0, 1, 2, 1])
    dws, _ = synth.gradient(FloatModel(arch, ws, bsz), inputs, labels)
    step = 1e-3
    for p, dw in enumerate(dws):
        flat = ws[p].reshape(-1)
        for i in range(flat.size):
            mod = [w.copy() for w in ws]
            mod[p].reshape(-1)[i] = flat[i] + step
            up = synth.batch_loss(FloatModel(arch, mod, bsz), inputs, labels)
            mod[p].reshape(-1)[i] = flat[i] - step
            down = synth.batch_loss(FloatModel(arch, mod, bsz), inputs, labels)
            fd = (up - down) / (2 * step)
            g = dw.reshape(-1)[i]
            if abs(g - fd) > 1e-4 * max(1.0, abs(fd)):
                return False, f"gradient mismatch layer {p} index {i}: {g} vs {fd}"
    return True, "analytic gradients match central finite differences (rel 1e-4)"


def cmd_verify(_args):
    checks = [("czr-oracle", _verify_czr), ("sign-flip-algebra", _verify_sign_flip),
              ("gradient-check", _verify_gradient)]
    failed = False
    for name, fn in checks:
        ok, detail = fn()
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed |= not ok
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser():
    parser = _Parser(prog="bitsiege", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="generate synthetic data, train, and save a victim")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("quantize", help="quantize a float model file")
    p.add_argument("--model", required=True)
    p.add_argument("--nq", type=int, required=True, choices=(4, 6, 8))
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("attack", help="single end-to-end attack run")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("sweep", help="Cartesian sweep over config axes")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed-base", type=int, default=None)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="turn trace files into CSV tables")
    p.add_argument("results")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("verify", help="run built-in acceptance checks")
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ModelFormatError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
