"""Run a benchmark grid and print a compact table of the mean rows.

    python scripts/bench_table.py scripts/bench_grid.json --out bench.csv
"""

import argparse
import json
from pathlib import Path

from snlsr.cli import run_benchmark


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("grid")
    parser.add_argument("--out", default="bench.csv")
    parser.add_argument("--plots")
    args = parser.parse_args()

    records = run_benchmark(json.loads(Path(args.grid).read_text()), args.out, plots_dir=args.plots)
    print(f"{'N':>5} {'r':>5} {'eta':>5} {'mode':>12} {'lam':>4} {'time':>7} {'rmsd0':>9} {'rmsd1':>9}  status")
    for rec in records:
        if rec["seed"] != "mean":
            continue
        print(
            f"{rec['N']:>5} {rec['r']:>5} {rec['eta']:>5} {rec['mode']:>12} {rec['lambda']:>4} "
            f"{rec['time_s']:>7.2f} {rec['rmsd_before']:>9.2e} {rec['rmsd_after']:>9.2e}  {rec['status']}"
        )


if __name__ == "__main__":
    main()
