#!/usr/bin/env python3
"""Build the small MNIST IDX fixture used by the smoke tests.

Source: the per-digit JSON files of the `mnist` npm package
(src/digits/<d>.json, each {"data": [784 * k floats in [0, 1]]}).

    python3 scripts/make_mnist_fixture.py <digits-dir> <out-dir> [per_class]

Takes the first `per_class` images of every digit (default 250), interleaves
them in a seeded random order and writes `images.idx` / `labels.idx`.
"""
import json
import random
import struct
import sys
from pathlib import Path


def main():
    src = Path(sys.argv[1])
    out = Path(sys.argv[2])
    per_class = int(sys.argv[3]) if len(sys.argv) > 3 else 250
    examples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        count = len(data) // 784
        if count < per_class:
            sys.exit(f"digit {digit} has only {count} images")
        for k in range(per_class):
            pixels = data[784 * k : 784 * (k + 1)]
            examples.append((digit, bytes(min(255, max(0, round(v * 255))) for v in pixels)))
    random.Random(0).shuffle(examples)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "images.idx", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(examples), 28, 28))
        for _, img in examples:
            f.write(img)
    with open(out / "labels.idx", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(examples)))
        f.write(bytes(label for label, _ in examples))
    print(f"wrote {len(examples)} images to {out}")


if __name__ == "__main__":
    main()
