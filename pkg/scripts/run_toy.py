"""Toy x2 run: train on seeded synthetic textures, then score against bicubic on a held-out set.

    python3 scripts/run_toy.py --out runs/toy --iterations 2000
"""
import argparse
import time

from drn.data import Dataset
from drn.train import evaluate, preset, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--iterations", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scale", type=int, default=2)
    args = ap.parse_args()

    cfg = preset("toy", scale=args.scale, iterations=args.iterations, seed=args.seed)
    train_set = Dataset.synthetic(32, 128, seed=1)
    held_out = Dataset.synthetic(8, 96, seed=2)

    start = time.perf_counter()
    result = train(train_set, cfg, out_dir=args.out,
                   reporter=lambda r: print(r.line(), flush=True) if r.iteration % 200 == 0 else None)
    print(f"trained {cfg.iterations} iterations in {time.perf_counter() - start:.0f}s")
    window = min(100, cfg.iterations)
    print(f"moving-average loss: {result.moving_average(window - 1, window):.4f} -> "
          f"{result.moving_average(cfg.iterations - 1, window):.4f}")
    print(evaluate(result.model, held_out, cfg.scale).table(), end="")


if __name__ == "__main__":
    main()
