#!/usr/bin/env python3
"""Build the desk-scale MNIST subset shipped in data/mnist-subset.tar.gz.

Source: the 10,000 MNIST digits bundled with the `mnist` npm package
(MIT licensed). Pixels there are stored as byte/255 rounded to three
decimals, so rounding back to the nearest byte recovers the original value.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/
"""
import argparse
import io
import json
import pathlib
import random
import struct
import tarfile

TRAIN_SIZE = 8000
SEED = 20200101


def idx_images(images):
    head = struct.pack(">IIII", 0x00000803, len(images), 28, 28)
    return head + b"".join(bytes(img) for img in images)


def idx_labels(labels):
    return struct.pack(">II", 0x00000801, len(labels)) + bytes(labels)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    args = ap.parse_args()

    samples = []
    for digit in range(10):
        flat = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        for i in range(0, len(flat), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in flat[i:i + 784]]
            samples.append((pixels, digit))

    random.Random(SEED).shuffle(samples)
    train, test = samples[:TRAIN_SIZE], samples[TRAIN_SIZE:]

    files = {
        "train-images-idx3-ubyte": idx_images([s[0] for s in train]),
        "train-labels-idx1-ubyte": idx_labels([s[1] for s in train]),
        "t10k-images-idx3-ubyte": idx_images([s[0] for s in test]),
        "t10k-labels-idx1-ubyte": idx_labels([s[1] for s in test]),
    }
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with tarfile.open(args.out_dir / "mnist-subset.tar.gz", "w:gz") as tar:
        for name, payload in files.items():
            info = tarfile.TarInfo(f"mnist-subset/{name}")
            info.size = len(payload)
            info.mtime = 0
            tar.addfile(info, io.BytesIO(payload))
    print(f"{len(train)} train / {len(test)} test examples")


if __name__ == "__main__":
    main()
