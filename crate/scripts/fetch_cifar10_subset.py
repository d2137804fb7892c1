#!/usr/bin/env python3
"""Build the 5,000/1,000 CIFAR-10 subset used by the trend experiment.

The subset holds the first 500 training images of every class, scanning
data_batch_1..5 in order, and the first 100 test images of every class
from test_batch. Both splits are written in the CIFAR-10 binary record
layout (1 label byte + 3072 planar RGB bytes) together with subset.json,
which lists the chosen source indices and output checksums.

Sources, tried in order:
  1. the official binary tarball (cifar-10-binary.tar.gz)
  2. the tfjs-cifar10 npm package, which stores the same pixels losslessly
     as PNG sheets (one image per 1024-pixel RGB row) plus JSON labels

Only the standard library is required.

usage: fetch_cifar10_subset.py [--out DIR] [--source official|npm|auto]
                               [--archive FILE]
"""

import argparse
import hashlib
import io
import json
import os
import struct
import sys
import tarfile
import urllib.request
import zlib

OFFICIAL_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
NPM_URL = "https://registry.npmjs.org/tfjs-cifar10/-/tfjs-cifar10-1.1.1.tgz"
TRAIN_PER_CLASS = 500
TEST_PER_CLASS = 100
CLASSES = 10
PIXELS = 3072
BATCH = 10000
HERE = os.path.dirname(os.path.abspath(__file__))
PINNED = os.path.join(HERE, "cifar10_subset.sha256.json")


def download(url):
    print(f"fetching {url}", file=sys.stderr)
    with urllib.request.urlopen(url, timeout=120) as r:
        return r.read()


def png_rows(data):
    """Yields the raw bytes of each scanline of an 8-bit RGB PNG."""
    if data[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError("not a PNG file")
    pos, idat = 8, []
    width = height = None
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        kind = data[pos + 4:pos + 8]
        body = data[pos + 8:pos + 8 + length]
        pos += 12 + length
        if kind == b"IHDR":
            width, height, depth, colour, _, _, interlace = struct.unpack(">IIBBBBB", body)
            if depth != 8 or colour != 2 or interlace != 0:
                raise ValueError("expected a non-interlaced 8-bit RGB PNG")
        elif kind == b"IDAT":
            idat.append(body)
        elif kind == b"IEND":
            break
    stride = width * 3
    inflate = zlib.decompressobj()
    pending = b""
    chunks = iter(idat)
    prev = bytearray(stride)
    for _ in range(height):
        while len(pending) < stride + 1:
            pending += inflate.decompress(next(chunks))
        ftype, line = pending[0], bytearray(pending[1:stride + 1])
        pending = pending[stride + 1:]
        unfilter(ftype, line, prev)
        yield bytes(line)
        prev = line


def unfilter(ftype, line, prev):
    n = len(line)
    if ftype == 0:
        return
    if ftype == 1:
        for i in range(3, n):
            line[i] = (line[i] + line[i - 3]) & 0xFF
    elif ftype == 2:
        for i in range(n):
            line[i] = (line[i] + prev[i]) & 0xFF
    elif ftype == 3:
        for i in range(n):
            left = line[i - 3] if i >= 3 else 0
            line[i] = (line[i] + ((left + prev[i]) >> 1)) & 0xFF
    elif ftype == 4:
        for i in range(n):
            a = line[i - 3] if i >= 3 else 0
            b = prev[i]
            c = prev[i - 3] if i >= 3 else 0
            p = a + b - c
            pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
            pred = a if pa <= pb and pa <= pc else (b if pb <= pc else c)
            line[i] = (line[i] + pred) & 0xFF
    else:
        raise ValueError(f"bad PNG filter type {ftype}")


def interleaved_to_planar(row):
    return row[0::3] + row[1::3] + row[2::3]


def official_batches(archive):
    """Yields (batch_name, records) with records as (label, planar_bytes)."""
    with tarfile.open(fileobj=io.BytesIO(archive), mode="r:gz") as tar:
        members = {os.path.basename(m.name): m for m in tar.getmembers()}
        for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
            raw = tar.extractfile(members[name]).read()
            yield name.replace(".bin", ""), (
                (raw[i], raw[i + 1:i + 1 + PIXELS]) for i in range(0, len(raw), PIXELS + 1)
            )


def npm_batches(archive):
    with tarfile.open(fileobj=io.BytesIO(archive), mode="r:gz") as tar:
        files = {os.path.basename(m.name): m for m in tar.getmembers()}

        def read(name):
            return tar.extractfile(files[name]).read()

        train_labels = json.loads(read("train_lables.json"))
        test_labels = json.loads(read("test_lables.json"))
        for b in range(1, 6):
            labels = train_labels[(b - 1) * BATCH:b * BATCH]
            rows = png_rows(read(f"data_batch_{b}.png"))
            yield f"data_batch_{b}", ((l, interleaved_to_planar(r)) for l, r in zip(labels, rows))
        rows = png_rows(read("test_batch.png"))
        yield "test_batch", ((l, interleaved_to_planar(r)) for l, r in zip(test_labels, rows))


def select(batches):
    """First TRAIN_PER_CLASS / TEST_PER_CLASS images per class."""
    splits = {"train": ([], [], [0] * CLASSES), "test": ([], [], [0] * CLASSES)}
    for index, (name, records) in enumerate(batches):
        split, quota = ("test", TEST_PER_CLASS) if name == "test_batch" else ("train", TRAIN_PER_CLASS)
        out, indices, counts = splits[split]
        if sum(counts) == quota * CLASSES:
            continue
        base = 0 if split == "test" else index * BATCH
        for row, (label, pixels) in enumerate(records):
            if counts[label] < quota:
                counts[label] += 1
                out.append(bytes([label]) + bytes(pixels))
                indices.append(base + row)
            if sum(counts) == quota * CLASSES:
                break
    for split, (_, _, counts) in splits.items():
        if len(set(counts)) != 1:
            raise RuntimeError(f"{split} split is unbalanced: {counts}")
    return {k: (b"".join(v[0]), v[1]) for k, v in splits.items()}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=os.path.join(HERE, "..", "data", "cifar10-subset"))
    ap.add_argument("--source", choices=["auto", "official", "npm"], default="auto")
    ap.add_argument("--archive", help="use a local copy of the source archive instead of downloading")
    args = ap.parse_args()

    source, archive = None, None
    order = ["official", "npm"] if args.source == "auto" else [args.source]
    for candidate in order:
        try:
            if args.archive:
                with open(args.archive, "rb") as f:
                    archive = f.read()
            else:
                archive = download(OFFICIAL_URL if candidate == "official" else NPM_URL)
            source = candidate
            break
        except OSError as e:
            print(f"{candidate} source unavailable: {e}", file=sys.stderr)
    if archive is None:
        sys.exit("no CIFAR-10 source reachable")

    batches = official_batches(archive) if source == "official" else npm_batches(archive)
    splits = select(batches)

    os.makedirs(args.out, exist_ok=True)
    manifest = {
        "dataset": "cifar10-subset",
        "format": "cifar-binary",
        "source": source,
        "source_url": args.archive or (OFFICIAL_URL if source == "official" else NPM_URL),
        "classes": ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"],
    }
    for split, (data, indices) in splits.items():
        path = os.path.join(args.out, f"{split}.bin")
        with open(path, "wb") as f:
            f.write(data)
        manifest[split] = {
            "file": f"{split}.bin",
            "count": len(indices),
            "per_class": TRAIN_PER_CLASS if split == "train" else TEST_PER_CLASS,
            "sha256": hashlib.sha256(data).hexdigest(),
            "source_indices": indices,
        }
        print(f"wrote {path} ({len(indices)} images)", file=sys.stderr)
    with open(os.path.join(args.out, "subset.json"), "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")

    if os.path.exists(PINNED):
        with open(PINNED) as f:
            pinned = json.load(f)
        for split in ("train", "test"):
            if pinned[split] != manifest[split]["sha256"]:
                sys.exit(f"{split}.bin checksum {manifest[split]['sha256']} differs from pinned {pinned[split]}")
        print("checksums match the pinned subset", file=sys.stderr)


if __name__ == "__main__":
    main()
