#!/usr/bin/env python3
"""Download the four MNIST IDX files and unpack them for the experiment gate.

The acceptance tests that need real digit data look for the files in
MNIST_DATA_DIR or data/mnist/. Run this on a machine with network access:

    python3 scripts/fetch_mnist.py            # writes to data/mnist/
    python3 scripts/fetch_mnist.py --dest DIR
"""

import argparse
import gzip
import io
import shutil
import sys
import urllib.request
from pathlib import Path

MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)

FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def fetch_one(name: str, dest: Path) -> None:
    target = dest / name
    if target.exists():
        print(f"{target} already present, skipping")
        return
    errors = []
    for mirror in MIRRORS:
        url = mirror + name + ".gz"
        try:
            print(f"downloading {url}")
            with urllib.request.urlopen(url, timeout=60) as resp:
                packed = resp.read()
        except OSError as exc:
            errors.append(f"{url}: {exc}")
            continue
        tmp = target.with_suffix(".part")
        with open(tmp, "wb") as fh:
            with gzip.open(io.BytesIO(packed)) as gz:
                shutil.copyfileobj(gz, fh)
        tmp.replace(target)
        print(f"wrote {target}")
        return
    raise SystemExit("all mirrors failed for " + name + ":\n  " + "\n  ".join(errors))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dest", default=None,
                        help="target directory (default: <repo>/data/mnist)")
    args = parser.parse_args(argv)
    dest = Path(args.dest) if args.dest else Path(__file__).resolve().parents[1] / "data" / "mnist"
    dest.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        fetch_one(name, dest)
    print(f"done; point MNIST_DATA_DIR at {dest} or leave it in place")
    return 0


if __name__ == "__main__":
    sys.exit(main())
