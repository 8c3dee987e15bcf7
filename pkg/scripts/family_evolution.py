"""Train a 1%-perturbation family with SET and track its pairwise distances.

    python scripts/family_evolution.py --out runs/family_evolution [--family-size 4]

Writes one heatmap per snapshot epoch next to the ``sparsetopo evolve``
outputs.  ``pairwise_summary.csv`` holds the mean distance per epoch and
``trajectory.csv`` the drift of each member from its own epoch-0 topology.
"""

import argparse
import sys
from pathlib import Path

from sparsetopo.cli import main as cli


def run():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--family-size", default="4")
    args, extra = parser.parse_known_args()
    code = cli(["evolve", "--family-size", args.family_size, "--out", str(args.out), *extra])
    if code:
        return code
    for matrix in sorted(args.out.glob("pairwise_epoch_*.csv")):
        code = cli(["heatmap", "--matrix", str(matrix), "--out", str(args.out / "heatmaps" / matrix.stem)])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
