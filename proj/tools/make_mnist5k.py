#!/usr/bin/env python3
"""Write the 5000-sample MNIST subset shipped with mlxtend as IDX files.

Usage: make_mnist5k.py <mlxtend wheel or mnist_5k.csv.gz> <out_dir>

The subset has 500 images per digit. The first 400 of each digit go to
train-*-ubyte, the remaining 100 to t10k-*-ubyte.
"""
import gzip
import io
import struct
import sys
import zipfile

import numpy as np


def read_csv(path):
    if path.endswith(".whl"):
        with zipfile.ZipFile(path) as z:
            raw = z.read("mlxtend/data/data/mnist_5k.csv.gz")
    else:
        with open(path, "rb") as f:
            raw = f.read()
    text = gzip.decompress(raw).decode()
    arr = np.loadtxt(io.StringIO(text), delimiter=",", dtype=np.int64)
    return arr[:, :-1].astype(np.uint8), arr[:, -1].astype(np.uint8)


def write_idx(path, images, labels):
    with open(path + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.tobytes())
    with open(path + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.tobytes())


def main():
    src, out = sys.argv[1], sys.argv[2]
    x, y = read_csv(src)
    train, test = [], []
    for d in range(10):
        idx = np.flatnonzero(y == d)
        train.extend(idx[:400])
        test.extend(idx[400:])
    train, test = np.sort(train), np.sort(test)
    write_idx(out + "/train", x[train], y[train])
    write_idx(out + "/t10k", x[test], y[test])
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main()
