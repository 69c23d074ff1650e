#!/usr/bin/env python3
"""Write a small MNIST corpus in IDX format.

The 5000-sample MNIST excerpt shipped inside the mlxtend wheel is split into
4000 training and 1000 test images (every fifth sample goes to the test split)
and written under the four conventional MNIST file names.

    python3 tools/make_mnist_idx.py data/mnist
"""
import argparse
import gzip
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_csv() -> bytes:
    try:
        import mlxtend.data  # noqa: F401
        path = pathlib.Path(mlxtend.data.__file__).parent / "data" / "mnist_5k.csv.gz"
        return path.read_bytes()
    except ImportError:
        pass
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps",
                        "-d", tmp, "mlxtend"], check=True, capture_output=True)
        wheel = next(pathlib.Path(tmp).glob("mlxtend-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            return zf.read(CSV_MEMBER)


def write_images(path, rows):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for r in rows:
            fh.write(bytes(r))


def write_labels(path, labels):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    args = ap.parse_args()
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    lines = gzip.decompress(fetch_csv()).decode().splitlines()
    images, labels = [], []
    for line in lines:
        vals = [int(float(v)) for v in line.split(",")]
        images.append(vals[:-1])
        labels.append(vals[-1])

    train = [i for i in range(len(lines)) if i % 5 != 4]
    test = [i for i in range(len(lines)) if i % 5 == 4]
    write_images(out / "train-images-idx3-ubyte", [images[i] for i in train])
    write_labels(out / "train-labels-idx1-ubyte", [labels[i] for i in train])
    write_images(out / "t10k-images-idx3-ubyte", [images[i] for i in test])
    write_labels(out / "t10k-labels-idx1-ubyte", [labels[i] for i in test])
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")


if __name__ == "__main__":
    main()
