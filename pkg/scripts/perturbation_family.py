"""Distance heatmap of a 1%-perturbation chain of sparse topologies.

    python scripts/perturbation_family.py --out runs/perturbation_family [--seed 5]

Extra flags are passed to ``sparsetopo family``.
"""

import argparse
import sys
from pathlib import Path

from sparsetopo.cli import main as cli


def run():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True)
    args, extra = parser.parse_known_args()
    out = args.out
    code = cli(["family", "--generations", "9", "--fraction", "0.01", "--out", str(out), *extra])
    if code:
        return code
    return cli(["heatmap", "--matrix", str(out / "pairwise.csv"), "--out", str(out / "heatmap")])


if __name__ == "__main__":
    sys.exit(run())
