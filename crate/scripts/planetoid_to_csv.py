"""Convert a raw Planetoid citation dataset (ind.<name>.* files) to the
node CSV layout read by `graffe`.

    python scripts/planetoid_to_csv.py RAW_DIR cora OUT_DIR

Uses the public split: the first 20 nodes per class for training, the next
500 for validation and the listed 1000 test nodes.
"""

import argparse
import csv
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load(raw: Path, name: str):
    parts = {}
    for key in ["x", "y", "tx", "ty", "allx", "ally", "graph"]:
        with open(raw / f"ind.{name}.{key}", "rb") as f:
            parts[key] = pickle.load(f, encoding="latin1")
    test_index = [int(line) for line in open(raw / f"ind.{name}.test.index")]
    test_sorted = np.sort(test_index)
    tx, ty = parts["tx"], parts["ty"]
    if name == "citeseer":
        # Isolated test nodes are missing from tx; pad with zero rows.
        full = range(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        tx, ty = tx_ext, ty_ext
        test_sorted = np.arange(test_sorted.min(), test_sorted.max() + 1)
    features = sp.vstack((parts["allx"], tx)).tolil()
    features[test_index, :] = features[test_sorted, :]
    labels = np.vstack((parts["ally"], ty))
    labels[test_index, :] = labels[test_sorted, :]
    n_train = parts["y"].shape[0]
    return features.toarray(), labels, parts["graph"], n_train, parts["allx"].shape[0], test_index


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("raw", type=Path)
    ap.add_argument("name")
    ap.add_argument("out", type=Path)
    args = ap.parse_args()

    x, onehot, graph, n_train, n_known, test_index = load(args.raw, args.name)
    n = x.shape[0]
    label = onehot.argmax(1)
    unlabeled = onehot.sum(1) == 0
    args.out.mkdir(parents=True, exist_ok=True)

    with open(args.out / "nodes.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node_id"] + [f"feat_{k}" for k in range(x.shape[1])] + ["label"])
        for i in range(n):
            # Unlabeled nodes fall back to class 0 and are never in a split.
            w.writerow([i] + [repr(float(v)) for v in x[i]] + [int(label[i])])

    edges = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))
    with open(args.out / "edges.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["src", "dst"])
        w.writerows(sorted(edges))

    with open(args.out / "splits.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node_id", "split"])
        for i in range(n_train):
            w.writerow([i, "train"])
        test = set(test_index)
        for i in range(n_train, min(n_train + 500, n_known)):
            if i not in test:
                w.writerow([i, "val"])
        for i in sorted(test_index):
            if not unlabeled[i]:
                w.writerow([i, "test"])

    print(f"{args.name}: {n} nodes, {len(edges)} edges, {x.shape[1]} features, {onehot.shape[1]} classes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
