"""Convert a TU graph-classification dataset (<NAME>_A.txt,
<NAME>_graph_indicator.txt, <NAME>_graph_labels.txt) to the graph CSV
layout read by `graffe`.

    python scripts/tu_to_csv.py RAW_DIR MUTAG OUT_DIR
"""

import argparse
import csv
import sys
from pathlib import Path


def read_ints(path: Path):
    return [[int(v) for v in line.replace(",", " ").split()] for line in open(path) if line.strip()]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("raw", type=Path)
    ap.add_argument("name")
    ap.add_argument("out", type=Path)
    args = ap.parse_args()

    prefix = args.raw / args.name
    indicator = [row[0] - 1 for row in read_ints(Path(f"{prefix}_graph_indicator.txt"))]
    labels = [row[0] for row in read_ints(Path(f"{prefix}_graph_labels.txt"))]
    edges = [(a - 1, b - 1) for a, b in read_ints(Path(f"{prefix}_A.txt"))]

    sizes = [0] * len(labels)
    first = [None] * len(labels)
    for node, g in enumerate(indicator):
        if first[g] is None:
            first[g] = node
        sizes[g] += 1

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "graphs.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["graph_id", "label", "num_nodes"])
        for g, (label, size) in enumerate(zip(labels, sizes)):
            w.writerow([g, label, size])

    seen = set()
    with open(args.out / "graph_edges.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["graph_id", "src", "dst"])
        for a, b in edges:
            g = indicator[a]
            if indicator[b] != g:
                raise SystemExit(f"edge ({a + 1}, {b + 1}) crosses graphs")
            u, v = sorted((a - first[g], b - first[g]))
            if u != v and (g, u, v) not in seen:
                seen.add((g, u, v))
                w.writerow([g, u, v])

    print(f"{args.name}: {len(labels)} graphs, {len(indicator)} nodes, {len(seen)} edges")
    return 0


if __name__ == "__main__":
    sys.exit(main())
