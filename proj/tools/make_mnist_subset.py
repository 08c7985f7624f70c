"""Writes data/mnist_2000.csv: 2000 MNIST digits (seeded sample of the 5000-row
subset bundled with mlxtend), one 28x28 image per line, intensities in [0, 1].

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/mnist_2000.csv
"""
import gzip
import io
import sys
import zipfile

import numpy as np


def main(wheel, out):
    raw = gzip.decompress(zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    pixels = table[:, :784] / 255.0  # last column is the label
    rows = np.random.default_rng(0).permutation(len(pixels))[:2000]
    np.savetxt(out, pixels[rows], fmt="%.3g", delimiter=",")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
