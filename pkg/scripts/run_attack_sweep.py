#!/usr/bin/env python3
"""End-to-end desk experiment: train a victim, then sweep attack settings.

Trains the small synthetic victim once, quantizes it, and runs the full
recover -> reconstruct -> rank -> flip pipeline over a grid of recovery
rates, ranking methods, and seeds.  Writes per-flip accuracies to a CSV
and prints a mean-accuracy summary table.
"""
import argparse
import csv
import os

import numpy as np

import bitsiege as bs


def build_victim(noise, epochs, seed):
    spec = bs.SynthSpec(noise=noise, seed=7)
    train_ds, test_ds = bs.gen_synthetic(spec)
    model = bs.train(bs.desk_architecture(), train_ds, bs.TrainConfig(epochs=epochs, seed=seed))
    return model, test_ds


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--nq", type=int, default=8, choices=(4, 6, 8))
    ap.add_argument("--nbf", type=int, default=50, help="flips per attack run")
    ap.add_argument("--seeds", type=int, default=5, help="number of attack seeds")
    ap.add_argument("--rp", type=float, nargs="+", default=[0.6, 0.8, 1.0],
                    help="recovery rates to sweep")
    ap.add_argument("--noise", type=float, default=0.5)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--train-seed", type=int, default=2)
    args = ap.parse_args()

    model, test_ds = build_victim(args.noise, args.epochs, args.train_seed)
    qmodel = bs.quantize_model(model, args.nq)
    base = bs.accuracy_quant(qmodel, test_ds)
    print(f"victim: {len(test_ds)} eval samples, quantized ({args.nq}-bit) accuracy {base:.4f}")

    rankings = [("fl2r", lambda s: bs.FL2R()),
                ("random", lambda s: bs.RandomBits(s)),
                ("gradient", lambda s: bs.GradientBaseline(32))]
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for rp in args.rp:
        for name, make in rankings:
            for seed in range(args.seeds):
                tr = bs.run_attack(qmodel, rp, seed, make(seed),
                                   bs.ReconstructionMethod.CZR, args.nbf, test_ds)
                rows.extend((rp, name, seed, i, a) for i, a in enumerate(tr.accuracies))
            finals = [r[4] for r in rows if r[0] == rp and r[1] == name and r[3] == args.nbf]
            print(f"rp={rp:.1f} ranking={name:<8} mean final accuracy "
                  f"{np.mean(finals):.4f} (drop {base - np.mean(finals):.4f})")

    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["rp", "ranking", "seed", "flip_index", "accuracy"])
        w.writerows([rp, name, seed, i, repr(a)] for rp, name, seed, i, a in rows)
    print(f"wrote {path} ({len(rows)} rows)")


if __name__ == "__main__":
    main()
