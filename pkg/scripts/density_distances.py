"""First-layer distances between random topologies across densities and seeds.

    python scripts/density_distances.py --out runs/density_distances [--seeds 0 1]

One topology per (density, seed) is drawn with ``sparsetopo init``; the
first-layer distance matrix over all of them is rendered as a heatmap.
"""

import argparse
import sys
from pathlib import Path

from sparsetopo.cli import FASHION_DENSITIES
from sparsetopo.cli import main as cli

WIDTHS = ["784", "784", "784", "784", "10"]


def run():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--densities", type=float, nargs="+", default=list(FASHION_DENSITIES))
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    parser.add_argument("--workers", default="1")
    args = parser.parse_args()
    paths, labels = [], []
    for density in args.densities:
        for seed in args.seeds:
            label = f"d{density:g}_s{seed}"
            target = args.out / "topologies" / label
            code = cli(["init", "--widths", *WIDTHS, "--density", str(density), "--seed", str(seed), "--out", str(target)])
            if code:
                return code
            paths.append(str(target / "topology.topo"))
            labels.append(label)
    code = cli(["pairwise", *paths, "--layer", "0", "--labels", *labels, "--workers", args.workers, "--out", str(args.out)])
    if code:
        return code
    return cli(["heatmap", "--matrix", str(args.out / "pairwise.csv"), "--out", str(args.out / "heatmap")])


if __name__ == "__main__":
    sys.exit(run())
