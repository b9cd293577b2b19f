#!/usr/bin/env python3
"""Build the MNIST subset fixtures used by the sweep experiments.

The digits come from the `mnist` npm package (version 1.1.0), which ships
MNIST images as per-class JSON arrays of 784 floats in [0, 1]:

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/make_mnist_fixture.py package crates/core/tests/data

Writes 2000 training and 500 test images (200 and 50 per class) as IDX files.
"""

import argparse
import json
import random
import struct
from pathlib import Path

SEED = 20210701
PER_CLASS_TRAIN = 200
PER_CLASS_TEST = 50
PIXELS = 784


def write_idx(out: Path, name: str, rows):
    with open(out / f"{name}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(rows), 28, 28))
        f.write(bytes(max(0, min(255, round(v * 255))) for im, _ in rows for v in im))
    with open(out / f"{name}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(rows)))
        f.write(bytes(label for _, label in rows))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("package", type=Path, help="extracted mnist npm package directory")
    ap.add_argument("out", type=Path, help="output directory")
    args = ap.parse_args()

    rng = random.Random(SEED)
    train, test = [], []
    for digit in range(10):
        raw = json.loads((args.package / "src" / "digits" / f"{digit}.json").read_text())["data"]
        idx = list(range(len(raw) // PIXELS))
        rng.shuffle(idx)
        take = PER_CLASS_TRAIN + PER_CLASS_TEST
        imgs = [raw[i * PIXELS:(i + 1) * PIXELS] for i in idx[:take]]
        train += [(im, digit) for im in imgs[:PER_CLASS_TRAIN]]
        test += [(im, digit) for im in imgs[PER_CLASS_TRAIN:]]
    rng.shuffle(train)
    rng.shuffle(test)

    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out, f"mnist-train-{len(train)}", train)
    write_idx(args.out, f"mnist-test-{len(test)}", test)


if __name__ == "__main__":
    main()
