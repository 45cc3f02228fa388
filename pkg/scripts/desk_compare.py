#!/usr/bin/env python3
"""Active vs passive comparison over several seeds, with a mean-rate summary.

Runs ``activegrasp compare`` once per seed into ``<out>/seed<k>`` and writes
``<out>/summary.csv`` with per-seed and mean success rates plus the config
entropy of active and heuristic data.

Usage:
  python scripts/desk_compare.py --seeds 0 1 2 3 4 --out runs/desk_compare
  python scripts/desk_compare.py --config scripts/configs/full.json --seeds 0 --out runs/full
"""
import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from activegrasp.cli import main as cli_main
from activegrasp.pipeline import METHODS

HERE = Path(__file__).resolve().parent


def read_row(path, key, value):
    with open(path, newline="") as fh:
        return next(r for r in csv.DictReader(fh) if r[key] == value)


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--config", default=str(HERE / "configs" / "desk.json"))
    p.add_argument("--out", required=True)
    args = p.parse_args()

    out = Path(args.out)
    rows = []
    for seed in args.seeds:
        run = out / f"seed{seed}"
        code = cli_main(["compare", "--seed", str(seed), "--config", args.config, "--out", str(run)])
        if code:
            return code
        rates = read_row(run / "compare.csv", "scope", "all")
        ent = read_row(run / "entropy.csv", "partition", "config")
        rows.append([seed, *(float(rates[m]) for m in METHODS),
                     float(ent["active"]), float(ent["heuristic_mean"])])
        print(f"seed {seed}: " + ", ".join(f"{m} {float(rates[m]):.3f}" for m in METHODS), flush=True)

    table = np.array([r[1:] for r in rows])
    header = ["seed", *METHODS, "entropy_active", "entropy_heuristic"]
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        w.writerow(["mean", *(repr(float(v)) for v in table.mean(0))])
    print("mean: " + ", ".join(f"{h} {v:.3f}" for h, v in zip(header[1:], table.mean(0))))
    return 0


if __name__ == "__main__":
    sys.exit(main())
