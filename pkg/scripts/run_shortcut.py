#!/usr/bin/env python3
"""Shortcut-satisfaction experiment: dual-variable training vs baselines.

Example:
    python scripts/run_shortcut.py --method dual --seeds 0 1 2 3 4 --out-dir runs
"""
import argparse
import json

from logicloss.harness import drivers


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--method", choices=("dual", "dl2", "none"), default="dual")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--count", type=int, default=500)
    ap.add_argument("--out-dir")
    args = ap.parse_args()
    for seed in args.seeds:
        r = drivers.run_shortcut_experiment(seed=seed, method=args.method,
                                            count=args.count, epochs=args.epochs,
                                            out_dir=args.out_dir)
        print(json.dumps(r, sort_keys=True, default=str))


if __name__ == "__main__":
    main()
