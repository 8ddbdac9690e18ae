#!/usr/bin/env python3
"""Convert the 10,000 MNIST digits bundled in the npm `mnist` package to IDX files.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_from_npm.py package/src/digits data/mnist-subset

Writes gzip-compressed train (8000) / t10k (2000) IDX files, split with a
fixed seed so the output is reproducible.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path, n_train: int = 8000) -> None:
    rows = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(raw) % 784 == 0
        for i in range(len(raw) // 784):
            pix = bytes(min(255, max(0, round(v * 255))) for v in raw[i * 784:(i + 1) * 784])
            rows.append((pix, digit))
    random.Random(20170314).shuffle(rows)
    dst.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", rows[:n_train]), ("t10k", rows[n_train:])):
        with gzip.GzipFile(dst / f"{name}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 0x803, len(part), 28, 28))
            for pix, _ in part:
                f.write(pix)
        with gzip.GzipFile(dst / f"{name}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
            f.write(struct.pack(">II", 0x801, len(part)))
            f.write(bytes(lbl for _, lbl in part))
        print(name, len(part))


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
