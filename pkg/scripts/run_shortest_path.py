#!/usr/bin/env python3
"""Shortest-distance prediction with symmetry/triangle constraints.

Example:
    python scripts/run_shortest_path.py --seeds 0 1 2 --epochs 25 --out-dir runs
"""
import argparse
import json

from logicloss.harness import drivers


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--baseline", action="store_true", help="train without constraints")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int, default=25)
    ap.add_argument("--n-vertices", type=int, default=8)
    ap.add_argument("--train-count", type=int, default=2000)
    ap.add_argument("--test-count", type=int, default=500)
    ap.add_argument("--out-dir")
    args = ap.parse_args()
    for seed in args.seeds:
        r = drivers.run_shortest_path_experiment(
            seed=seed, constrained=not args.baseline, n_vertices=args.n_vertices,
            train_count=args.train_count, test_count=args.test_count,
            epochs=args.epochs, out_dir=args.out_dir)
        print(json.dumps(r, sort_keys=True, default=str))


if __name__ == "__main__":
    main()
