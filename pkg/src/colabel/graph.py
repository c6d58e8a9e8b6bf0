"""Text-attributed graph storage: CSR adjacency, features, labels, texts, splits.

Node ids are dense ``0..n-1``. Edges are undirected; every loader symmetrizes,
drops self-loops and deduplicates before building the CSR arrays.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

UNKNOWN = -1


class GraphFormatError(ValueError):
    """Raised when an input file does not follow its declared format."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph in compressed sparse row form."""

    n_nodes: int
    indptr: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indptr", _frozen(np.asarray(self.indptr, dtype=np.int64)))
        object.__setattr__(self, "indices", _frozen(np.asarray(self.indices, dtype=np.int64)))
        if self.indptr.shape != (self.n_nodes + 1,):
            raise ValueError("indptr must have n_nodes + 1 entries")

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[int, int]] | np.ndarray, n_nodes: int | None = None) -> "Graph":
        arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        arr = arr.reshape(-1, 2)
        if arr.size and arr.min() < 0:
            raise ValueError("node ids must be non-negative")
        seen = int(arr.max()) + 1 if arr.size else 0
        if n_nodes is None:
            n_nodes = seen
        elif seen > n_nodes:
            raise ValueError(f"edge references node {seen - 1} but n_nodes={n_nodes}")
        arr = arr[arr[:, 0] != arr[:, 1]]
        both = np.concatenate([arr, arr[:, ::-1]])
        # one int64 key per directed edge -> sorted unique (src, dst)
        keys = np.unique(both[:, 0] * max(n_nodes, 1) + both[:, 1])
        src = keys // max(n_nodes, 1)
        dst = keys % max(n_nodes, 1)
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return cls(n_nodes, np.cumsum(indptr), dst)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return len(self.indices) // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def edges(self) -> np.ndarray:
        """Undirected edges as an ``(m, 2)`` array with ``u < v``, lexicographically sorted."""
        src = np.repeat(np.arange(self.n_nodes), self.degrees)
        mask = src < self.indices
        return np.stack([src[mask], self.indices[mask]], axis=1)

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices), dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n_nodes, self.n_nodes))

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n_nodes == other.n_nodes
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __hash__(self):
        return hash((self.n_nodes, self.indptr.tobytes(), self.indices.tobytes()))

    def __repr__(self):
        return f"Graph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"


def load_graph(path: str | Path) -> Graph:
    """Read a TSV edge list with an optional ``n=<N>`` header line."""
    declared = None
    edges = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not any(line.strip() for line in lines):
        raise GraphFormatError(f"{path}: empty edge list")
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        if lineno == 1 and line.startswith("n="):
            try:
                declared = int(line[2:])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: bad header {line!r}") from None
            if declared < 0:
                raise GraphFormatError(f"{path}:{lineno}: negative node count")
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise GraphFormatError(f"{path}:{lineno}: expected 'src<TAB>dst', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
        if u < 0 or v < 0:
            raise GraphFormatError(f"{path}:{lineno}: negative node id")
        if declared is not None and max(u, v) >= declared:
            raise GraphFormatError(f"{path}:{lineno}: node id {max(u, v)} >= declared n={declared}")
        edges.append((u, v))
    return Graph.from_edges(np.array(edges, dtype=np.int64).reshape(-1, 2), n_nodes=declared)


def write_graph(graph: Graph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"n={graph.n_nodes}\n")
        for u, v in graph.edges():
            fh.write(f"{u}\t{v}\n")


def load_features(path: str | Path, n_nodes: int | None = None) -> np.ndarray:
    """Read a headerless CSV of per-node feature rows."""
    try:
        X = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise GraphFormatError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(X)):
        row, col = np.argwhere(~np.isfinite(X))[0]
        raise GraphFormatError(f"{path}: non-finite value at row {row}, column {col}")
    if n_nodes is not None and X.shape[0] != n_nodes:
        raise GraphFormatError(f"{path}: {X.shape[0]} feature rows for a graph with {n_nodes} nodes")
    return _frozen(X)


@dataclass(frozen=True)
class LabelSpace:
    class_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if len(self.class_names) < 2:
            raise ValueError("a label space needs at least two classes")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("class names must be unique")

    def __len__(self):
        return len(self.class_names)

    def index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise KeyError(f"unknown class name {name!r}") from None

    def name(self, idx: int) -> str:
        return self.class_names[idx]


def load_label_space(path: str | Path) -> LabelSpace:
    with open(path, encoding="utf-8") as fh:
        names = json.load(fh)
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise GraphFormatError(f"{path}: label space must be a JSON array of strings")
    return LabelSpace(tuple(names))


def load_labels(path: str | Path, label_space: LabelSpace, n_nodes: int) -> np.ndarray:
    """Read ``node_id,class_name`` rows into a per-node class index array.

    Nodes without a row get ``UNKNOWN`` (-1).
    """
    labels = np.full(n_nodes, UNKNOWN, dtype=np.int64)
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and row == ["node_id", "class_name"]:
                continue
            if len(row) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected 'node_id,class_name'")
            try:
                node = int(row[0])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: bad node id {row[0]!r}") from None
            if not 0 <= node < n_nodes:
                raise GraphFormatError(f"{path}:{lineno}: node id {node} outside graph of {n_nodes} nodes")
            try:
                labels[node] = label_space.index(row[1])
            except KeyError:
                raise GraphFormatError(f"{path}:{lineno}: class {row[1]!r} not in label space") from None
    return _frozen(labels)


def write_labels(labels: np.ndarray, label_space: LabelSpace, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "class_name"])
        for node, y in enumerate(labels):
            if y != UNKNOWN:
                w.writerow([node, label_space.name(int(y))])


@dataclass(frozen=True)
class TextCorpus:
    texts: tuple[str, ...]
    missing: tuple[int, ...] = ()

    def __getitem__(self, node: int) -> str:
        return self.texts[node]

    def __len__(self):
        return len(self.texts)


def load_texts(path: str | Path, n_nodes: int) -> TextCorpus:
    texts: list[str | None] = [None] * n_nodes
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                node, text = rec["node_id"], rec["text"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise GraphFormatError(f"{path}:{lineno}: expected {{\"node_id\": int, \"text\": str}}") from None
            if not isinstance(node, int) or not isinstance(text, str):
                raise GraphFormatError(f"{path}:{lineno}: wrong field types")
            if not 0 <= node < n_nodes:
                raise GraphFormatError(f"{path}:{lineno}: node id {node} outside graph of {n_nodes} nodes")
            texts[node] = text
    missing = tuple(i for i, t in enumerate(texts) if t is None)
    if missing:
        logger.warning("%d nodes have no text; using empty strings (first: %s)", len(missing), missing[:5])
    return TextCorpus(tuple(t or "" for t in texts), missing)


def write_texts(corpus: Sequence[str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for node, text in enumerate(corpus):
            fh.write(json.dumps({"node_id": node, "text": text}, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    shots: int = field(default=0)

    def __post_init__(self):
        sets = [set(self.train), set(self.val), set(self.test)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("train/val/test must be pairwise disjoint")

    def validate(self, labels: np.ndarray, n_classes: int) -> None:
        n = len(labels)
        for part in (self.train, self.val, self.test):
            if any(not 0 <= i < n for i in part):
                raise ValueError("split references a node outside the graph")
        counts = np.bincount(np.asarray(labels)[list(self.train)], minlength=n_classes)
        if self.shots and not np.all(counts == self.shots):
            raise ValueError(f"train split is not {self.shots}-shot per class: {counts.tolist()}")

    def to_json(self) -> str:
        return json.dumps({"train": list(self.train), "val": list(self.val), "test": list(self.test),
                           "shots": self.shots}, indent=1)


def save_split(split: Split, path: str | Path) -> None:
    Path(path).write_text(split.to_json() + "\n", encoding="utf-8")


def load_split(path: str | Path) -> Split:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return Split(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), int(d.get("shots", 0)))


def make_few_shot_split(labels: np.ndarray, k: int, val_size: int, seed: int,
                        n_classes: int | None = None) -> Split:
    """Sample ``k`` labeled nodes per class for training, then ``val_size`` for validation.

    Every remaining labeled node goes to test; nodes with unknown labels are in no split.
    """
    labels = np.asarray(labels)
    if k < 1:
        raise ValueError("k must be at least 1")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    rng = np.random.default_rng(seed)
    train = []
    for c in range(n_classes):
        pool = np.flatnonzero(labels == c)
        if len(pool) < k:
            raise ValueError(f"class {c} has {len(pool)} labeled nodes, fewer than k={k}")
        train.extend(rng.choice(pool, size=k, replace=False).tolist())
    rest = np.setdiff1d(np.flatnonzero(labels != UNKNOWN), train)
    if val_size > len(rest):
        raise ValueError(f"val_size={val_size} exceeds the {len(rest)} labeled nodes left after training")
    val = rng.choice(rest, size=val_size, replace=False)
    test = np.setdiff1d(rest, val)
    return Split(tuple(sorted(int(i) for i in train)), tuple(sorted(int(i) for i in val)),
                 tuple(int(i) for i in test), shots=k)


def graph_stats(graph: Graph) -> dict:
    deg = graph.degrees
    return {
        "n_nodes": graph.n_nodes,
        "n_edges": graph.n_edges,
        "isolated": int(np.sum(deg == 0)),
        "mean_degree": float(deg.mean()) if graph.n_nodes else math.nan,
    }
