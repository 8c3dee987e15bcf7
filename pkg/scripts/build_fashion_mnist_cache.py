"""Build the Fashion-MNIST IDX cache from the ``fashion-mnist`` npm package.

For machines that cannot reach the official download mirror.  The npm
package ships the 70000 images grouped by class as JSON arrays of 784
bytes; each class file holds its 1000 test images first, then an empty
separator entry, then its 6000 training images.

    npm pack fashion-mnist && tar xzf fashion-mnist-*.tgz
    python scripts/build_fashion_mnist_cache.py package/src/clothes

The original within-split sample order is not recoverable; samples are
interleaved with a fixed permutation.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from sparsetopo.data import FASHION_FILES, cache_root, write_idx, write_manifest

TEST_PER_CLASS = 1000
TRAIN_PER_CLASS = 6000


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("clothes_dir", type=Path, help="directory holding 0.json .. 9.json")
    parser.add_argument("--cache", type=Path, default=None)
    args = parser.parse_args()

    train_x, train_y, test_x, test_y = [], [], [], []
    for label in range(10):
        rows = [r for r in json.loads((args.clothes_dir / f"{label}.json").read_text())["data"] if len(r) == 784]
        if len(rows) != TEST_PER_CLASS + TRAIN_PER_CLASS:
            raise SystemExit(f"class {label}: {len(rows)} images, expected 7000")
        images = np.asarray(rows, dtype=np.uint8).reshape(-1, 28, 28)
        test_x.append(images[:TEST_PER_CLASS])
        train_x.append(images[TEST_PER_CLASS:])
        test_y.append(np.full(TEST_PER_CLASS, label, dtype=np.uint8))
        train_y.append(np.full(TRAIN_PER_CLASS, label, dtype=np.uint8))

    rng = np.random.default_rng(20200101)
    out = cache_root(args.cache) / "fashion_mnist"
    out.mkdir(parents=True, exist_ok=True)
    for split, xs, ys in (("train", train_x, train_y), ("test", test_x, test_y)):
        x, y = np.concatenate(xs), np.concatenate(ys)
        order = rng.permutation(len(x))
        write_idx(out / FASHION_FILES[f"{split}_images"][0], x[order])
        write_idx(out / FASHION_FILES[f"{split}_labels"][0], y[order])
    write_manifest(out, [name for name, _ in FASHION_FILES.values()])
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
