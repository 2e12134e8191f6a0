#!/usr/bin/env python3
"""Rebuild data/mnist/*.gz from the 10k MNIST digits bundled in the npm `mnist` package.

Usage: npm pack mnist && tar xzf mnist-*.tgz && python3 tools/mnist_from_npm.py package/src/digits data/mnist
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    images, labels = bytearray(), bytearray()
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        images += bytes(min(255, max(0, round(v * 255))) for v in data)
        labels += bytes([digit]) * (len(data) // 784)
    n = len(labels)
    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "mnist-10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28) + images)
    with gzip.GzipFile(dst / "mnist-10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n) + labels)
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
