"""Test accuracy of SET, FIXED and dense training over a density grid.

    python scripts/density_sweep.py --out runs/density_sweep [--scale paper] [--dataset cifar10]

All flags after ``--out`` are passed to ``sparsetopo density-sweep``; the
summary table lands in ``summary.csv``.
"""

import argparse
import sys
from pathlib import Path

from sparsetopo.cli import main as cli


def run():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True)
    args, extra = parser.parse_known_args()
    return cli(["density-sweep", "--out", str(args.out), *extra])


if __name__ == "__main__":
    sys.exit(run())
