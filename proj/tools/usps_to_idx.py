#!/usr/bin/env python3
"""Convert the LIBSVM-format USPS files into IDX files readable by clarinet.

The LIBSVM distribution ships `usps` (7291 training digits) and `usps.t`
(2007 test digits), optionally bz2-compressed. Each line holds a label in
1..10 for digits 0..9, followed by 256 index:value pairs with values in [-1, 1].

Usage:
    python3 tools/usps_to_idx.py usps.bz2 usps.t.bz2 DATA_ROOT/usps
"""

import argparse
import bz2
import gzip
import pathlib
import struct
import sys

SIDE = 16


def open_text(path):
    path = pathlib.Path(path)
    if path.suffix == ".bz2":
        return bz2.open(path, "rt")
    if path.suffix == ".gz":
        return gzip.open(path, "rt")
    return open(path, "r")


def read_libsvm(path):
    images, labels = [], []
    with open_text(path) as f:
        for number, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            label = int(float(parts[0]))
            if not 1 <= label <= 10:
                sys.exit(f"{path}:{number}: label {label} out of range")
            pixels = [0.0] * (SIDE * SIDE)
            for item in parts[1:]:
                index, value = item.split(":")
                pixels[int(index) - 1] = float(value)
            images.append(bytes(round((min(max(v, -1.0), 1.0) + 1.0) * 127.5) for v in pixels))
            labels.append(label - 1)
    return images, labels


def write_idx(directory, split, images, labels):
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / f"{split}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIDE, SIDE))
        for image in images:
            f.write(image)
    with open(directory / f"{split}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("train", help="LIBSVM usps training file (.bz2/.gz or plain)")
    parser.add_argument("test", help="LIBSVM usps.t test file")
    parser.add_argument("out", type=pathlib.Path, help="output directory, usually DATA_ROOT/usps")
    args = parser.parse_args()
    for split, path in (("train", args.train), ("test", args.test)):
        images, labels = read_libsvm(path)
        write_idx(args.out, split, images, labels)
        print(f"{split}: {len(images)} images -> {args.out}")


if __name__ == "__main__":
    main()
