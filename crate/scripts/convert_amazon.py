#!/usr/bin/env python3
"""Convert amazon_electronics_{computers,photo}.npz into the dataset directory layout.

    python scripts/convert_amazon.py amazon_electronics_computers.npz out/computers --train 1000
    python scripts/convert_amazon.py amazon_electronics_photo.npz out/photo --train 800

The training set draws an equal number of nodes per class where possible; the
test set is drawn uniformly from the rest.
"""

import argparse
import json
import os

import numpy as np


def csr_rows(data, indices, indptr, shape):
    dense = np.zeros(shape, dtype=np.float64)
    for r in range(shape[0]):
        lo, hi = indptr[r], indptr[r + 1]
        dense[r, indices[lo:hi]] = data[lo:hi]
    return dense


def load(path):
    f = np.load(path, allow_pickle=True)
    n = int(f["adj_shape"][0])
    indptr, indices = f["adj_indptr"], f["adj_indices"]
    edges = set()
    for u in range(n):
        for v in indices[indptr[u]:indptr[u + 1]]:
            v = int(v)
            if u != v:
                edges.add((min(u, v), max(u, v)))
    features = csr_rows(f["attr_data"], f["attr_indices"], f["attr_indptr"], tuple(f["attr_shape"]))
    labels = np.asarray(f["labels"], dtype=np.int64)
    return sorted(edges), features, labels


def split(labels, train, test, rng):
    classes = int(labels.max()) + 1
    per_class = train // classes
    chosen = []
    for c in range(classes):
        ids = np.flatnonzero(labels == c)
        chosen.extend(rng.choice(ids, size=min(per_class, len(ids)), replace=False).tolist())
    rest = np.setdiff1d(np.arange(len(labels)), chosen)
    if len(chosen) < train:
        extra = rng.choice(rest, size=train - len(chosen), replace=False)
        chosen.extend(extra.tolist())
        rest = np.setdiff1d(rest, extra)
    test_ids = rng.choice(rest, size=min(test, len(rest)), replace=False)
    return sorted(int(i) for i in chosen), sorted(int(i) for i in test_ids)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("npz")
    ap.add_argument("out")
    ap.add_argument("--train", type=int, required=True)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    edges, features, labels = load(args.npz)
    n, d = features.shape
    classes = int(labels.max()) + 1
    train, test = split(labels, args.train, args.test, np.random.default_rng(args.seed))

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "edges.tsv"), "w") as fh:
        fh.writelines(f"{u}\t{v}\n" for u, v in edges)
    np.savetxt(os.path.join(args.out, "features.csv"), features, delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(args.out, "labels.csv"), np.eye(classes)[labels], delimiter=",", fmt="%.1f")
    with open(os.path.join(args.out, "split.json"), "w") as fh:
        json.dump({"train": train, "test": test}, fh)
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump({"nodes": n, "train": len(train), "test": len(test), "classes": classes, "features": d}, fh, indent=2)
    print(f"{n} nodes, {len(edges)} edges, {d} features, {classes} classes -> {args.out}")


if __name__ == "__main__":
    main()
