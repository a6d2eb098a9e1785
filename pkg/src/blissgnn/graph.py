"""Graph, feature and dataset containers shared by every other module.

Graphs are stored in compressed sparse row form where row ``i`` lists the
in-neighbours ``N_i`` of node ``i`` (the nodes ``i`` aggregates from).  All
per-edge arrays elsewhere in the package (coefficients, bandit weights) are
aligned with the edge *slots* of this layout, i.e. with positions in
``CsrGraph.targets``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DatasetError",
    "ValidationError",
    "CsrGraph",
    "DatasetBundle",
    "EdgeCoefficients",
    "from_edges",
    "load_dataset",
    "save_dataset",
    "synthetic_skewed",
    "edge_coefficients",
    "gather_rows",
    "bundle_fingerprint",
    "isclose_bundles",
]


class DatasetError(Exception):
    """A dataset directory is missing a file or cannot be parsed."""


class ValidationError(ValueError):
    """An input violates a structural invariant."""


@dataclass(frozen=True, eq=False)
class CsrGraph:
    num_nodes: int
    offsets: np.ndarray
    targets: np.ndarray
    edge_ids: np.ndarray

    def __post_init__(self):
        for name in ("offsets", "targets", "edge_ids"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    @property
    def num_edges(self) -> int:
        return int(self.targets.size)

    @property
    def degrees(self) -> np.ndarray:
        """In-degree ``|N_i|`` of every node."""
        return np.diff(self.offsets)

    @property
    def rows(self) -> np.ndarray:
        """Destination node of every edge slot."""
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees)

    def neighbors(self, i: int) -> np.ndarray:
        return self.targets[self.offsets[i]:self.offsets[i + 1]]

    def slot(self, i: int, j: int) -> int:
        """Edge slot of ``j -> i``; raises KeyError if absent."""
        nbrs = self.neighbors(i)
        pos = int(np.searchsorted(nbrs, j))
        if pos >= nbrs.size or nbrs[pos] != j:
            raise KeyError((i, j))
        return int(self.offsets[i]) + pos

    def num_non_loop_edges(self) -> int:
        return int(np.count_nonzero(self.targets != self.rows))

    def validate(self):
        off, tgt = self.offsets, self.targets
        if off.shape != (self.num_nodes + 1,):
            raise ValidationError("offsets must have length num_nodes + 1")
        if off[0] != 0 or off[-1] != tgt.size:
            raise ValidationError("offsets must start at 0 and end at len(targets)")
        if np.any(np.diff(off) < 0):
            raise ValidationError("offsets must be non-decreasing")
        if tgt.size:
            if tgt.min() < 0 or tgt.max() >= self.num_nodes:
                bad = int(tgt[(tgt < 0) | (tgt >= self.num_nodes)][0])
                raise ValidationError(f"neighbor id {bad} out of range [0, {self.num_nodes})")
            # strictly increasing inside each row: a non-increase is only
            # allowed where a new row starts
            step = np.diff(tgt)
            row_start = np.zeros(tgt.size, dtype=bool)
            row_start[off[:-1][off[:-1] < tgt.size]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise ValidationError("targets must be strictly increasing within each row")
        if self.edge_ids.shape != tgt.shape or not np.array_equal(
            np.sort(self.edge_ids), np.arange(tgt.size)
        ):
            raise ValidationError("edge_ids must be a permutation of 0..num_edges-1")

    def to_scipy(self, values=None):
        """Sparse ``(num_nodes, num_nodes)`` matrix with ``A[i, j] = values[slot]``."""
        import scipy.sparse as sp

        if values is None:
            values = np.ones(self.num_edges)
        return sp.csr_matrix(
            (np.asarray(values, dtype=np.float64), self.targets, self.offsets),
            shape=(self.num_nodes, self.num_nodes),
        )


def from_edges(num_nodes, src, dst, *, undirected=False, self_loops=True) -> CsrGraph:
    """Build a CSR graph from ``src -> dst`` pairs.

    Duplicates are removed; ``src`` becomes an in-neighbour of ``dst``.
    """
    src = np.asarray(src, dtype=np.int64).ravel()
    dst = np.asarray(dst, dtype=np.int64).ravel()
    if src.shape != dst.shape:
        raise ValidationError("src and dst must have the same length")
    for arr in (src, dst):
        bad = arr[(arr < 0) | (arr >= num_nodes)]
        if bad.size:
            raise ValidationError(f"edge references node {int(bad[0])} but num_nodes={num_nodes}")
    if undirected:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    if self_loops:
        loop = np.arange(num_nodes, dtype=np.int64)
        src, dst = np.concatenate([src, loop]), np.concatenate([dst, loop])
    key = np.unique(dst * num_nodes + src)
    rows, cols = np.divmod(key, num_nodes) if num_nodes else (key, key)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=num_nodes), out=offsets[1:])
    return CsrGraph(num_nodes, offsets, cols, np.arange(cols.size, dtype=np.int64))


def gather_rows(graph: CsrGraph, rows):
    """Edge slots of the given rows.

    Returns ``(local_row, slots)`` where ``local_row[e]`` indexes into
    ``rows`` and ``slots[e]`` is the global edge slot.
    """
    rows = np.asarray(rows, dtype=np.int64)
    starts = graph.offsets[rows]
    lens = graph.offsets[rows + 1] - starts
    local_row = np.repeat(np.arange(rows.size, dtype=np.int64), lens)
    first = np.repeat(np.cumsum(lens) - lens, lens)
    slots = np.repeat(starts, lens) + (np.arange(local_row.size, dtype=np.int64) - first)
    return local_row, slots


@dataclass(frozen=True, eq=False)
class EdgeCoefficients:
    """Per-edge aggregation coefficients ``alpha_ij`` aligned with edge slots.

    ``mode`` is ``"GCN"``, ``"SAGE"`` or ``"CUSTOM"`` (hand-set weights used by
    tests and the oracle module).
    """

    graph: CsrGraph
    mode: str
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.shape != (self.graph.num_edges,):
            raise ValidationError("coefficient array must have one value per edge slot")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def row(self, i):
        g = self.graph
        return g.neighbors(i), self.values[g.offsets[i]:g.offsets[i + 1]]


def edge_coefficients(graph: CsrGraph, mode: str) -> EdgeCoefficients:
    mode = mode.upper()
    deg = graph.degrees.astype(np.float64)
    if np.any(deg == 0):
        raise ValidationError("every node needs at least one in-neighbor")
    rows = graph.rows
    if mode == "SAGE":
        vals = 1.0 / deg[rows]
    elif mode == "GCN":
        vals = 1.0 / (np.sqrt(deg[rows]) * np.sqrt(deg[graph.targets]))
    else:
        raise ValueError(f"unknown coefficient mode {mode!r}")
    return EdgeCoefficients(graph, mode, vals)


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    graph: CsrGraph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int
    undirected: bool = True
    name: str = field(default="")

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.graph.num_nodes:
            raise ValidationError("features must have one row per node")
        bad = np.argwhere(~np.isfinite(feats))
        if bad.size:
            r, c = bad[0]
            raise ValidationError(f"non-finite feature at (row={r}, col={c})")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (self.graph.num_nodes,):
            raise ValidationError("labels must have one entry per node")
        out = np.flatnonzero(labels >= self.num_classes)
        if out.size:
            raise ValidationError(
                f"node {int(out[0])} has label {int(labels[out[0]])} >= num_classes={self.num_classes}"
            )
        masks = []
        for name in ("train_mask", "val_mask", "test_mask"):
            m = np.asarray(getattr(self, name), dtype=bool)
            if m.shape != (self.graph.num_nodes,):
                raise ValidationError(f"{name} must have one entry per node")
            m.setflags(write=False)
            object.__setattr__(self, name, m)
            masks.append(m)
        if np.any(masks[0] & masks[1]) or np.any(masks[0] & masks[2]) or np.any(masks[1] & masks[2]):
            raise ValidationError("train/val/test masks must be disjoint")
        for name, m in zip(("train", "val", "test"), masks):
            if np.any(labels[m] < 0):
                raise ValidationError(f"{name} split contains an unlabeled node")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def split_nodes(self, split: str) -> np.ndarray:
        mask = {"train": self.train_mask, "val": self.val_mask, "test": self.test_mask}[split]
        return np.flatnonzero(mask)

    def summary(self) -> dict:
        return {
            "name": self.name,
            "num_nodes": self.num_nodes,
            "num_edges": self.graph.num_non_loop_edges(),
            "num_edges_with_self_loops": self.graph.num_edges,
            "num_features": self.num_features,
            "num_classes": self.num_classes,
            "num_train": int(self.train_mask.sum()),
            "num_val": int(self.val_mask.sum()),
            "num_test": int(self.test_mask.sum()),
        }


_REQUIRED = ("meta.json", "edges.tsv", "features.csv", "labels.csv", "splits.json")


def _read_edges(path: Path):
    text = path.read_text()
    if not text.strip():
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    try:
        arr = np.loadtxt(path, dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise DatasetError(f"cannot parse {path}: {exc}") from exc
    if arr.shape[1] != 2:
        raise DatasetError(f"{path} must have exactly two columns 'src dst'")
    return arr[:, 0], arr[:, 1]


def load_dataset(path) -> DatasetBundle:
    """Load a dataset directory (meta.json, edges.tsv, features.csv, labels.csv, splits.json)."""
    root = Path(path)
    for fname in _REQUIRED:
        if not (root / fname).is_file():
            raise DatasetError(f"missing dataset file: {root / fname}")
    meta = json.loads((root / "meta.json").read_text())
    n = int(meta["num_nodes"])
    src, dst = _read_edges(root / "edges.tsv")
    graph = from_edges(n, src, dst, undirected=bool(meta.get("undirected", False)))

    try:
        feats = np.loadtxt(root / "features.csv", delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DatasetError(f"cannot parse {root / 'features.csv'}: {exc}") from exc
    if feats.shape[0] != n:
        raise ValidationError(f"features.csv has {feats.shape[0]} rows, expected {n}")
    nf = meta.get("num_features")
    if nf is not None and feats.shape[1] != int(nf):
        raise ValidationError(f"features.csv has {feats.shape[1]} columns, expected {nf}")
    labels = np.loadtxt(root / "labels.csv", dtype=np.int64, ndmin=1)

    splits = json.loads((root / "splits.json").read_text())
    masks = []
    for key, alias in (("train", "train"), ("val", "validation"), ("test", "test")):
        idx = np.asarray(splits.get(key, splits.get(alias, [])), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValidationError(f"split '{key}' references node outside [0, {n})")
        m = np.zeros(n, dtype=bool)
        m[idx] = True
        masks.append(m)
    return DatasetBundle(
        graph,
        feats,
        labels,
        *masks,
        num_classes=int(meta["num_classes"]),
        undirected=bool(meta.get("undirected", False)),
        name=str(meta.get("name", root.name)),
    )


def save_dataset(bundle: DatasetBundle, path):
    """Write ``bundle`` in the directory format read by :func:`load_dataset`.

    All stored edges (self-loops included) are written, so reloading is
    an exact round trip.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    g = bundle.graph
    meta = {
        "name": bundle.name,
        "num_nodes": g.num_nodes,
        "num_features": bundle.num_features,
        "num_classes": bundle.num_classes,
        "undirected": bool(bundle.undirected),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    np.savetxt(root / "edges.tsv", np.column_stack([g.targets, g.rows]), fmt="%d", delimiter="\t")
    np.savetxt(root / "features.csv", bundle.features, fmt="%.17g", delimiter=",")
    np.savetxt(root / "labels.csv", bundle.labels, fmt="%d")
    splits = {s: bundle.split_nodes(s).tolist() for s in ("train", "val", "test")}
    (root / "splits.json").write_text(json.dumps(splits) + "\n")


def synthetic_skewed(num_nodes, avg_degree, norm_skew, seed, *, num_features=16, p_in=0.8) -> DatasetBundle:
    """Random two-community graph with power-law feature norms.

    Node ``j`` with random rank ``r_j`` in ``1..n`` has feature norm
    ``(n / r_j) ** norm_skew``, so the max/min norm ratio is ``n ** norm_skew``.
    Features point along a class-dependent direction plus noise before the
    norm is imposed.  Splits are 50/25/25.
    """
    if num_nodes < 2 or avg_degree < 1 or norm_skew < 0:
        raise ValueError("need num_nodes >= 2, avg_degree >= 1, norm_skew >= 0")
    rng = np.random.default_rng(seed)
    n = int(num_nodes)
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.permutation(n)[n // 2:]] = 1

    # undirected edges: each contributes to two degrees
    m = max(1, int(round(n * avg_degree / 2)))
    src = rng.integers(0, n, size=m)
    same = rng.random(m) < p_in
    dst = np.empty(m, dtype=np.int64)
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        others = np.flatnonzero(labels != cls)
        sel = labels[src] == cls
        pick_same = sel & same
        pick_other = sel & ~same
        dst[pick_same] = members[rng.integers(0, members.size, size=int(pick_same.sum()))]
        dst[pick_other] = others[rng.integers(0, others.size, size=int(pick_other.sum()))]
    keep = src != dst
    graph = from_edges(n, src[keep], dst[keep], undirected=True)

    centers = rng.standard_normal((2, num_features))
    feats = centers[labels] + 0.5 * rng.standard_normal((n, num_features))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    ranks = rng.permutation(n) + 1
    feats *= ((n / ranks) ** norm_skew)[:, None]

    perm = rng.permutation(n)
    n_train, n_val = n // 2, n // 4
    train = np.zeros(n, bool)
    val = np.zeros(n, bool)
    test = np.zeros(n, bool)
    train[perm[:n_train]] = True
    val[perm[n_train:n_train + n_val]] = True
    test[perm[n_train + n_val:]] = True
    return DatasetBundle(
        graph, feats, labels, train, val, test, num_classes=2, undirected=True,
        name=f"synthetic_skewed({n},{avg_degree},{norm_skew},{seed})",
    )


def bundle_fingerprint(bundle: DatasetBundle) -> str:
    """Stable hash over every array of the bundle."""
    import hashlib

    h = hashlib.sha256()
    g = bundle.graph
    for arr in (g.offsets, g.targets, g.edge_ids, bundle.features, bundle.labels,
                bundle.train_mask, bundle.val_mask, bundle.test_mask):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(str(bundle.num_classes).encode())
    return h.hexdigest()


def isclose_bundles(a: DatasetBundle, b: DatasetBundle, atol=1e-15) -> bool:
    ga, gb = a.graph, b.graph
    same_ints = (
        ga.num_nodes == gb.num_nodes
        and np.array_equal(ga.offsets, gb.offsets)
        and np.array_equal(ga.targets, gb.targets)
        and np.array_equal(ga.edge_ids, gb.edge_ids)
        and np.array_equal(a.labels, b.labels)
        and np.array_equal(a.train_mask, b.train_mask)
        and np.array_equal(a.val_mask, b.val_mask)
        and np.array_equal(a.test_mask, b.test_mask)
        and a.num_classes == b.num_classes
    )
    return bool(same_ints and a.features.shape == b.features.shape
                and np.allclose(a.features, b.features, rtol=0, atol=atol))

