"""Convert the digit JSON files shipped in the npm ``mnist`` package to IDX.

The npm package (https://www.npmjs.com/package/mnist, MIT) bundles 10,000
MNIST digits as pixel intensities divided by 255 and rounded to three
decimals; rounding back recovers the original bytes exactly.

Usage:
    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python scripts/build_mnist_subset.py package/src/digits src/flcc/_data
"""
import gzip
import json
import sys
from pathlib import Path

import numpy as np

from flcc.data import LabeledDataset, write_idx

TRAIN_COUNT = 8000
SHUFFLE_SEED = 20230101


def main(digits_dir: str, out_dir: str) -> None:
    images, labels = [], []
    for digit in range(10):
        raw = json.loads((Path(digits_dir) / f"{digit}.json").read_text())["data"]
        flat = np.asarray(raw, dtype=np.float64).reshape(-1, 28, 28) * 255.0
        pixels = np.rint(flat)
        if np.abs(flat - pixels).max() > 0.2:
            raise SystemExit(f"digit {digit}: intensities do not round to bytes")
        images.append(pixels.astype(np.uint8))
        labels.append(np.full(len(pixels), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(SHUFFLE_SEED).permutation(len(labels))
    images, labels = images[order], labels[order]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = {
        "train": LabeledDataset(images[:TRAIN_COUNT], labels[:TRAIN_COUNT]),
        "t10k": LabeledDataset(images[TRAIN_COUNT:], labels[TRAIN_COUNT:]),
    }
    for prefix, ds in splits.items():
        img_bytes, lbl_bytes = write_idx(ds)
        # mtime=0 keeps the archives byte-reproducible
        with gzip.GzipFile(out / f"{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as fh:
            fh.write(img_bytes)
        with gzip.GzipFile(out / f"{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as fh:
            fh.write(lbl_bytes)
        print(prefix, len(ds))


if __name__ == "__main__":
    main(*sys.argv[1:3])
