#!/usr/bin/env python3
"""Per-arm reward, time and pull counts for one desk-scale active run.

Usage:
  python scripts/arm_stats.py --seed 0 --out runs/arms
"""
import argparse
import csv
import sys
from pathlib import Path

from activegrasp.cli import main as cli_main

HERE = Path(__file__).resolve().parent


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=str(HERE / "configs" / "desk.json"))
    p.add_argument("--out", required=True)
    args = p.parse_args()

    code = cli_main(["active", "--seed", str(args.seed), "--config", args.config, "--timing", "--out", args.out])
    if code:
        return code
    with open(Path(args.out) / "arms.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    total = sum(int(r["pulls"]) for r in rows)
    print(f"{'arm':<12}{'mean reward':>12}{'mean time (s)':>15}{'pulls':>8}{'share':>8}")
    for r in rows:
        n = int(r["pulls"])
        print(f"{r['arm']:<12}{float(r['mean_reward']):>12.3f}{float(r['mean_time']):>15.3f}{n:>8}{n / total:>8.1%}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
