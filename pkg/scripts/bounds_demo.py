"""Bounds on a small random loss table, and supervised vs dual complexity for a toy hypothesis set.

    python3 scripts/bounds_demo.py --rows 4 --samples 12 --delta 0.05
"""
import argparse

import numpy as np

from drn.bounds import LossTable, bound_finite, dual_vs_supervised, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=4)
    ap.add_argument("--samples", type=int, default=12)
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    primal = rng.uniform(0, 0.5, size=(args.rows, args.samples))
    dual = rng.uniform(0, 0.5, size=(args.rows, 3, args.samples))
    table = LossTable((primal[:, None, :] + dual).reshape(-1, args.samples), 1.0)

    print(summarize(table, args.delta).text(), end="")
    print(f"finite-class deviation for |H|={table.hypotheses}: "
          f"{bound_finite(table.hypotheses, 1.0, table.m, args.delta):.6f}")
    for k, v in dual_vs_supervised(primal, dual, 1.0).items():
        print(f"R_hat {k}: {v:.6f}")


if __name__ == "__main__":
    main()
