#!/usr/bin/env python3
"""Write the 5,000-digit MNIST subset shipped in the mlxtend wheel as IDX files.

Usage: make_mnist_subset.py <mlxtend-*.whl> <out-dir>

The CSV holds 784 pixel columns (0-255) followed by the label. Rows are
written in their original order; splitting and shuffling happen at load time.
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__.strip().splitlines()[2], file=sys.stderr)
        return 2
    wheel, out = Path(sys.argv[1]), Path(sys.argv[2])
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER)).decode()
    pixels, labels = bytearray(), bytearray()
    for line in io.StringIO(raw):
        fields = line.strip().split(",")
        if len(fields) != 785:
            continue
        values = [int(float(v)) for v in fields]
        pixels.extend(values[:784])
        labels.append(values[784])
    n = len(labels)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 2051, n, 28, 28) + bytes(pixels))
    (out / "train-labels-idx1-ubyte").write_bytes(struct.pack(">II", 2049, n) + bytes(labels))
    print(f"wrote {n} images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
