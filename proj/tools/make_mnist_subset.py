#!/usr/bin/env python3
"""Build a small MNIST subset in IDX format from the `mnist` npm package.

The npm package ships 10,000 real MNIST digits as JSON arrays of pixel
intensities rounded to three decimals. Each value is k/255 for an integer k,
so round(v * 255) recovers the original byte exactly.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset

Writes train (first 700 per class) and test (remaining) IDX files.
"""
import json
import os
import struct
import sys

ROWS = COLS = 28
TRAIN_PER_CLASS = 700


def write_idx(images, labels, prefix):
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), ROWS, COLS))
        for img in images:
            f.write(bytes(img))
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst = sys.argv[1], sys.argv[2]
    os.makedirs(dst, exist_ok=True)
    per_class = []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        n = len(flat) // (ROWS * COLS)
        imgs = []
        for i in range(n):
            px = flat[i * ROWS * COLS:(i + 1) * ROWS * COLS]
            imgs.append([min(255, max(0, round(v * 255))) for v in px])
        per_class.append(imgs)
    # Interleave classes so that the first-N-per-class rule sees a mixed stream.
    def interleave(lo, hi):
        images, labels = [], []
        longest = max(len(c) for c in per_class)
        for i in range(lo, min(hi, longest)):
            for digit, imgs in enumerate(per_class):
                if i < len(imgs):
                    images.append(imgs[i])
                    labels.append(digit)
        return images, labels
    write_idx(*interleave(0, TRAIN_PER_CLASS), os.path.join(dst, "train"))
    write_idx(*interleave(TRAIN_PER_CLASS, 10**9), os.path.join(dst, "t10k"))


if __name__ == "__main__":
    main()
