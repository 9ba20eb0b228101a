"""Four-cell ablation (plain, dual, progressive, dual+progressive) on synthetic textures.

    python3 scripts/run_ablation.py --scale 4 --iterations 1000 --report runs/ablation.txt
"""
import argparse
import logging
import time
from pathlib import Path

from drn.data import Dataset
from drn.train import ablate, preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=int, default=4)
    ap.add_argument("--iterations", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--report")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = preset("toy", scale=args.scale, iterations=args.iterations, seed=args.seed)
    start = time.perf_counter()
    report = ablate(Dataset.synthetic(32, 128, seed=1), cfg, Dataset.synthetic(8, 96, seed=2))
    text = report.table()
    print(text, end="")
    print(f"{time.perf_counter() - start:.0f}s")
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(text)


if __name__ == "__main__":
    main()
