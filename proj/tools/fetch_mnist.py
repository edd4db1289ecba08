#!/usr/bin/env python3
"""Build a 10k-sample MNIST corpus in IDX format.

The official IDX mirrors are tried first. When they are unreachable the
digits bundled with the `mnist` npm package (10,000 samples, pixels stored
as floats in [0, 1]) are converted into the same IDX layout.

Output (in --out, default $EMBED_ROUTER_DATA_DIR or ./data):
    t10k-images-idx3-ubyte
    t10k-labels-idx1-ubyte
"""

import argparse
import gzip
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile
import urllib.request

IMAGES = "t10k-images-idx3-ubyte"
LABELS = "t10k-labels-idx1-ubyte"
MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]


def try_official(out_dir):
    for base in MIRRORS:
        try:
            for name in (IMAGES, LABELS):
                with urllib.request.urlopen(base + name + ".gz", timeout=15) as r:
                    raw = gzip.decompress(r.read())
                with open(os.path.join(out_dir, name), "wb") as f:
                    f.write(raw)
            return True
        except Exception as e:  # noqa: BLE001
            print(f"mirror {base} failed: {e}", file=sys.stderr)
    return False


def from_npm(out_dir, package_dir=None):
    with tempfile.TemporaryDirectory() as tmp:
        if package_dir is None:
            subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                           stdout=subprocess.DEVNULL)
            with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
                tar.extractall(tmp)
            package_dir = os.path.join(tmp, "package")

        pixels = bytearray()
        labels = bytearray()
        for digit in range(10):
            with open(os.path.join(package_dir, "src", "digits", f"{digit}.json")) as f:
                data = json.load(f)["data"]
            if len(data) % 784:
                raise ValueError(f"digit {digit}: {len(data)} values is not a multiple of 784")
            count = len(data) // 784
            pixels.extend(min(255, max(0, round(v * 255))) for v in data)
            labels.extend([digit] * count)

    n = len(labels)
    with open(os.path.join(out_dir, IMAGES), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(pixels)
    with open(os.path.join(out_dir, LABELS), "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels)
    return n


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=os.environ.get("EMBED_ROUTER_DATA_DIR", "data"))
    ap.add_argument("--npm-package-dir", help="already-unpacked mnist npm package")
    ap.add_argument("--skip-official", action="store_true")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    if not args.skip_official and args.npm_package_dir is None and try_official(args.out):
        print(f"wrote official t10k files to {args.out}")
        return
    n = from_npm(args.out, args.npm_package_dir)
    print(f"wrote {n} samples to {args.out}")


if __name__ == "__main__":
    main()
