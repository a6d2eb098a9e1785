"""Convert the raw Planetoid files (ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index})
into the dataset directory layout read by ``blissgnn.graph.load_dataset``.

    python3 scripts/convert_planetoid.py /path/to/planetoid/data cora data/cora

Uses the standard public split: the first 20 labelled nodes per class for
training (the first ``len(y)`` rows), the next 500 for validation and the
``test.index`` nodes for testing.  Citeseer's isolated test nodes without
features get zero features and no label, as in the usual loader.
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from blissgnn.graph import DatasetBundle, from_edges, save_dataset


def _load(raw, name, part):
    with open(Path(raw) / f"ind.{name}.{part}", "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert(raw, name):
    x, y, tx, ty, allx, ally, graph = (_load(raw, name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_idx = np.loadtxt(Path(raw) / f"ind.{name}.test.index", dtype=np.int64)
    test_sorted = np.sort(test_idx)
    if name == "citeseer":
        full = np.arange(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((full.size, x.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((full.size, y.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext

    feats = sp.vstack((allx, tx)).tolil()
    feats[test_idx, :] = feats[test_sorted, :]
    onehot = np.vstack((ally, ty))
    onehot[test_idx, :] = onehot[test_sorted, :]
    n = feats.shape[0]

    labels = np.where(onehot.sum(1) > 0, onehot.argmax(1), -1).astype(np.int64)
    src, dst = [], []
    for i, nbrs in graph.items():
        for j in nbrs:
            if i != j and i < n and j < n:
                src.append(j)
                dst.append(i)
    g = from_edges(n, np.array(src), np.array(dst), undirected=True)

    train = np.zeros(n, bool)
    val = np.zeros(n, bool)
    test = np.zeros(n, bool)
    train[: y.shape[0]] = True
    val[y.shape[0]: min(y.shape[0] + 500, allx.shape[0])] = True
    test[test_idx] = True
    test &= labels >= 0
    features = np.asarray(feats.todense(), dtype=np.float64)
    return DatasetBundle(g, features, labels, train, val, test, num_classes=onehot.shape[1],
                         undirected=True, name=name)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("raw_dir")
    ap.add_argument("name", choices=["cora", "citeseer", "pubmed"])
    ap.add_argument("out_dir")
    args = ap.parse_args(argv)
    bundle = convert(args.raw_dir, args.name)
    save_dataset(bundle, args.out_dir)
    s = bundle.summary()
    print(f"{args.name}: {s['num_nodes']} nodes, {s['num_edges']} edges, {s['num_classes']} classes -> {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
