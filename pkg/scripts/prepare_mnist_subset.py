"""Convert a 5000-image MNIST CSV (784 pixel columns then the label) to IDX files.

The CSV is the subset shipped inside the mlxtend wheel
(``mlxtend/data/data/mnist_5k.csv.gz``). Rows are shuffled with a fixed
seed, then split into ``train-*`` and ``t10k-*`` IDX pairs.

    python scripts/prepare_mnist_subset.py mnist_5k.csv.gz data/mnist5k --test 500
"""

import argparse
from pathlib import Path

import numpy as np

from smoothcert.data import write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv")
    ap.add_argument("outdir")
    ap.add_argument("--test", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    raw = np.loadtxt(args.csv, delimiter=",", dtype=np.int64)
    if raw.shape[1] != 785 or raw[:, :784].min() < 0 or raw[:, :784].max() > 255:
        raise SystemExit(f"{args.csv}: expected 785 integer columns with pixels in 0..255")
    raw = raw[np.random.default_rng(args.seed).permutation(len(raw))]
    images = raw[:, :784].reshape(-1, 28, 28).astype(np.uint8)
    labels = raw[:, 784].astype(np.uint8)

    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    k = args.test
    write_idx(out / "t10k-images-idx3-ubyte.gz", images[:k])
    write_idx(out / "t10k-labels-idx1-ubyte.gz", labels[:k])
    write_idx(out / "train-images-idx3-ubyte.gz", images[k:])
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[k:])
    print(f"wrote {len(raw) - k} train / {k} test images to {out}")


if __name__ == "__main__":
    main()
