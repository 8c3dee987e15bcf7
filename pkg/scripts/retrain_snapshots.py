"""Retrain SET snapshots from their weights and from fresh random weights.

    python scripts/retrain_snapshots.py --out runs/retrain_snapshots [--seeds 0 1 2] [--scale paper]

Trains one SET run per seed with ``sparsetopo evolve``, then retrains every
snapshot with ``sparsetopo retrain`` in both modes.  Extra flags go to
``evolve``; the data and optimizer ones among them also go to ``retrain``.
"""

import argparse
import sys
from pathlib import Path

from sparsetopo.cli import main as cli

SHARED = {
    "--scale", "--dataset", "--offline", "--cache-dir", "--data-seed", "--train-subset", "--workers",
    "--batch-size", "--learning-rate", "--momentum", "--weight-decay", "--init-scheme", "--augment",
}


def shared_flags(extra: list[str]) -> list[str]:
    out, keep = [], False
    for token in extra:
        if token.startswith("--"):
            keep = token.split("=")[0] in SHARED
        if keep:
            out.append(token)
    return out


def run():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--seeds", nargs="+", default=["0", "1", "2"])
    parser.add_argument("--snapshot-epochs", nargs="+", default=[])
    parser.add_argument("--retrain-epochs", default=None)
    args, extra = parser.parse_known_args()
    runs = args.out / "train"
    code = cli(["evolve", "--seeds", *args.seeds, "--out", str(runs), *extra])
    if code:
        return code
    traces = [str(p) for p in sorted((runs / "runs").iterdir())]
    retrain = ["retrain", "--traces", *traces, "--out", str(args.out / "retrain"), *shared_flags(extra)]
    if args.snapshot_epochs:
        retrain += ["--snapshot-epochs", *args.snapshot_epochs]
    if args.retrain_epochs:
        retrain += ["--epochs", args.retrain_epochs]
    return cli(retrain)


if __name__ == "__main__":
    sys.exit(run())
