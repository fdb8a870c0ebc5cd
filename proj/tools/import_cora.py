#!/usr/bin/env python3
"""Convert a public citation-graph download into the betagnn dataset layout.

Two inputs are understood:

  * a compressed sparse ``.npz`` as distributed with the Nettack / Metattack
    / Pro-GNN code (keys ``adj_data``, ``adj_indices``, ``adj_indptr``,
    ``adj_shape``, ``attr_*`` and ``labels``); Cora there is already
    restricted to its largest connected component (2485 nodes);
  * the LINQS directory with ``cora.content`` and ``cora.cites`` (2708
    nodes); ``--lcc`` keeps the largest connected component.

Output: ``meta.json``, ``edges.txt``, ``features.csv``, ``labels.txt``.
"""

import argparse
import json
import pathlib
import sys

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


def load_npz(path):
    z = np.load(path, allow_pickle=True)
    adj = sp.csr_matrix((z["adj_data"], z["adj_indices"], z["adj_indptr"]), shape=tuple(z["adj_shape"]))
    if "attr_data" in z:
        x = sp.csr_matrix((z["attr_data"], z["attr_indices"], z["attr_indptr"]), shape=tuple(z["attr_shape"]))
    else:
        x = sp.csr_matrix(z["attr_matrix"])
    labels = np.asarray(z["labels"]).astype(np.int64)
    return adj, x, labels


def load_linqs(directory):
    directory = pathlib.Path(directory)
    ids, feats, classes = [], [], []
    with open(directory / "cora.content") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            feats.append([float(v) for v in parts[1:-1]])
            classes.append(parts[-1])
    index = {p: i for i, p in enumerate(ids)}
    names = sorted(set(classes))
    labels = np.array([names.index(c) for c in classes], dtype=np.int64)
    rows, cols = [], []
    with open(directory / "cora.cites") as f:
        for line in f:
            parts = line.split()
            if len(parts) == 2 and parts[0] in index and parts[1] in index:
                rows.append(index[parts[0]])
                cols.append(index[parts[1]])
    n = len(ids)
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return adj, sp.csr_matrix(np.array(feats)), labels


def largest_component(adj, x, labels):
    _, comp = connected_components(adj, directed=False)
    keep = np.flatnonzero(comp == np.bincount(comp).argmax())
    return adj[keep][:, keep], x[keep], labels[keep]


def write_dataset(out, name, adj, x, labels):
    adj = adj.maximum(adj.T).tocoo()
    pairs = sorted({(int(u), int(v)) for u, v in zip(adj.row, adj.col) if u < v})
    _, labels = np.unique(labels, return_inverse=True)
    out = pathlib.Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "edges.txt", "w") as f:
        f.writelines(f"{u} {v}\n" for u, v in pairs)
    dense = x.toarray()
    with open(out / "features.csv", "w") as f:
        for row in dense:
            f.write(",".join(repr(float(v)) if v != int(v) else str(int(v)) for v in row) + "\n")
    with open(out / "labels.txt", "w") as f:
        f.writelines(f"{int(c)}\n" for c in labels)
    meta = {
        "name": name,
        "n_nodes": int(dense.shape[0]),
        "n_features": int(dense.shape[1]),
        "n_classes": int(labels.max() + 1),
        "n_edges": len(pairs),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return meta


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("source", help="cora.npz file or LINQS directory")
    ap.add_argument("--out", default="data/cora", help="output dataset directory")
    ap.add_argument("--name", default="cora")
    ap.add_argument("--lcc", action="store_true", help="keep only the largest connected component")
    args = ap.parse_args(argv)

    src = pathlib.Path(args.source)
    adj, x, labels = load_npz(src) if src.suffix == ".npz" else load_linqs(src)
    adj = (adj + adj.T).tocsr()
    adj.setdiag(0)
    adj.eliminate_zeros()
    if args.lcc:
        adj, x, labels = largest_component(adj, x, labels)
    meta = write_dataset(args.out, args.name, adj, x, labels)
    print(json.dumps(meta))
    return 0


if __name__ == "__main__":
    sys.exit(main())
