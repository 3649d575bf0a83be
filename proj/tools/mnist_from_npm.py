#!/usr/bin/env python3
"""Convert the digits bundled with the `mnist` npm package into IDX files.

The npm package (MIT licensed) ships 10,000 MNIST digits as one JSON file per
class, pixels normalized to k/255 and rounded to three decimals. This script
restores the byte values, interleaves the classes with a fixed shuffle so the
files are not grouped by label, and writes the standard IDX layout.

    npm install mnist
    python3 tools/mnist_from_npm.py node_modules/mnist data/mnist
"""
import json
import random
import struct
import sys
from pathlib import Path


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    package = Path(sys.argv[1])
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    samples = []
    for digit in range(10):
        data = json.loads((package / "src" / "digits" / f"{digit}.json").read_text())["data"]
        if len(data) % 784:
            raise SystemExit(f"{digit}.json: pixel count not a multiple of 784")
        for start in range(0, len(data), 784):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in data[start:start + 784])
            samples.append((pixels, digit))

    random.Random(20240101).shuffle(samples)

    with open(out / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(out / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {len(samples)} samples to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
