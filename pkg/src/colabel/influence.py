"""Shortest-path influence bounds and top-K candidate selection.

For a labeled source ``s`` and target ``t`` at hop distance ``h``, the influence
of ``s`` on ``t`` under linear mean aggregation (``D^-1 A``) is bounded by

    n_paths(s, t) / min over shortest paths of prod(deg(v) for v on path, v != s)

Path counts and degree products are tracked in log space, so the bound never
overflows on dense graphs. Scores are exponentiated only for reporting.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator

from .graph import Graph

BRUTE_FORCE_MAX_NODES = 200


class SelectionShortfallWarning(UserWarning):
    """Fewer reachable candidates than requested."""


@dataclass(frozen=True)
class InfluenceProfile:
    """Per-node shortest-path statistics from one source.

    ``dist`` is ``inf`` for unreachable nodes; their ``log_path_count`` is ``-inf``
    and ``min_log_degprod`` is ``inf``, which makes ``log_bound`` equal ``-inf``.
    """

    source: int
    dist: np.ndarray
    log_path_count: np.ndarray
    min_log_degprod: np.ndarray

    @property
    def log_bound(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            out = self.log_path_count - self.min_log_degprod
        out[~np.isfinite(self.dist)] = -np.inf
        return out

    @property
    def bound(self) -> np.ndarray:
        return np.exp(self.log_bound)


def _gather_neighbors(graph: Graph, frontier: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (src, dst) for every edge leaving ``frontier``."""
    counts = graph.degrees[frontier]
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    starts = graph.indptr[frontier]
    offsets = np.repeat(starts - np.cumsum(counts) + counts, counts)
    return np.repeat(frontier, counts), graph.indices[offsets + np.arange(total)]


def shortest_path_profile(graph: Graph, source: int) -> InfluenceProfile:
    n = graph.n_nodes
    if not 0 <= source < n:
        raise IndexError(f"source {source} outside graph of {n} nodes")
    dist = np.full(n, -1, dtype=np.int64)
    lpc = np.full(n, -np.inf)
    mld = np.full(n, np.inf)
    log_deg = np.log(np.maximum(graph.degrees, 1)).astype(np.float64)

    dist[source] = 0
    lpc[source] = 0.0
    mld[source] = 0.0
    frontier = np.array([source], dtype=np.int64)
    level = 0
    while frontier.size:
        src, dst = _gather_neighbors(graph, frontier)
        fresh = dist[dst] == -1
        nxt = np.unique(dst[fresh])
        if nxt.size == 0:
            break
        dist[nxt] = level + 1
        # every edge into the next level is a DAG edge; frontier values are final
        src, dst = src[fresh], dst[fresh]
        np.logaddexp.at(lpc, dst, lpc[src])
        np.minimum.at(mld, dst, mld[src])
        mld[nxt] += log_deg[nxt]
        frontier = nxt
        level += 1

    d = dist.astype(np.float64)
    d[dist < 0] = np.inf
    return InfluenceProfile(source, d, lpc, mld)


@dataclass(frozen=True)
class InfluenceScoreTable:
    """Best bound over all labeled sources for each candidate node.

    Arrays are indexed by node id. Non-candidates hold ``log_score = -inf`` and
    ``best_source = -1``.
    """

    candidates: np.ndarray
    log_score: np.ndarray
    best_source: np.ndarray
    dist: np.ndarray

    @property
    def score(self) -> np.ndarray:
        return np.exp(self.log_score)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id", "log_score", "best_source", "dist"])
            for v in np.flatnonzero(self.candidates):
                dist = self.dist[v]
                w.writerow([int(v), repr(float(self.log_score[v])), int(self.best_source[v]),
                            int(dist) if np.isfinite(dist) else "inf"])

    @classmethod
    def from_csv(cls, path: str | Path, n_nodes: int) -> "InfluenceScoreTable":
        cand = np.zeros(n_nodes, dtype=bool)
        log_score = np.full(n_nodes, -np.inf)
        best = np.full(n_nodes, -1, dtype=np.int64)
        dist = np.full(n_nodes, np.inf)
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                v = int(row["node_id"])
                cand[v] = True
                log_score[v] = float(row["log_score"])
                best[v] = int(row["best_source"])
                dist[v] = float(row["dist"])
        return cls(cand, log_score, best, dist)


def influence_scores(graph: Graph, sources: Iterable[int], unlabeled: Iterable[int] | None = None,
                     n_jobs: int | None = None) -> InfluenceScoreTable:
    """Max-over-sources influence bound for every unlabeled node.

    Profiles may be computed on a thread pool; they are merged in ascending
    source order, so equal bounds resolve to the lowest source id and the
    result does not depend on ``n_jobs``.
    """
    sources = sorted(set(int(s) for s in sources))
    if not sources:
        raise ValueError("influence scores need at least one labeled source")
    n = graph.n_nodes
    cand = np.zeros(n, dtype=bool)
    if unlabeled is None:
        cand[:] = True
    else:
        cand[np.fromiter((int(v) for v in unlabeled), dtype=np.int64)] = True
    cand[sources] = False

    log_score = np.full(n, -np.inf)
    best = np.full(n, -1, dtype=np.int64)
    dist = np.full(n, np.inf)

    def merge(p: InfluenceProfile):
        lb = p.log_bound
        better = cand & (lb > log_score)
        log_score[better] = lb[better]
        best[better] = p.source
        dist[better] = p.dist[better]

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            for p in ex.map(lambda s: shortest_path_profile(graph, s), sources):
                merge(p)
    else:
        for s in sources:
            merge(shortest_path_profile(graph, s))
    return InfluenceScoreTable(cand, log_score, best, dist)


def select_top_k(scores: InfluenceScoreTable, k: int) -> list[int]:
    """Top-``k`` candidates by score, ties to the lower node id; unreachable nodes never qualify."""
    if k < 1:
        raise ValueError("k must be at least 1")
    eligible = np.flatnonzero(scores.candidates & np.isfinite(scores.log_score))
    order = np.lexsort((eligible, -scores.log_score[eligible]))
    chosen = eligible[order[:k]]
    if len(chosen) < k:
        warnings.warn(f"only {len(chosen)} candidates have positive influence; requested {k}",
                      SelectionShortfallWarning, stacklevel=2)
    return [int(v) for v in chosen]


def row_normalized_adjacency(graph: Graph) -> sp.csr_matrix:
    """``D^-1 A`` with all-zero rows for isolated nodes."""
    A = graph.adjacency()
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return sp.diags(inv) @ A


def brute_force_influence(graph: Graph, source: int, target: int, hops: int) -> float:
    """Entry ``(target, source)`` of ``(D^-1 A)^hops`` by repeated sparse products.

    Test oracle for small graphs only; independent of the BFS bookkeeping above.
    """
    if graph.n_nodes > BRUTE_FORCE_MAX_NODES:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_NODES} nodes, got {graph.n_nodes}")
    if hops < 0:
        raise ValueError("hops must be non-negative")
    P = row_normalized_adjacency(graph)
    col = np.zeros(graph.n_nodes)
    col[source] = 1.0
    for _ in range(hops):
        col = P @ col
    return float(col[target])


class InfluenceSelector(BaseEstimator):
    """Rank unlabeled nodes by their strongest labeled-source influence bound.

    Parameters
    ----------
    top_k : int
        Number of candidates to keep.
    max_hops : int or None
        When set, only nodes within this many hops of some labeled node are
        candidates (a cheap subgraph pre-filter for large graphs).
    n_jobs : int or None
        Threads used for per-source BFS.
    """

    def __init__(self, top_k: int = 1500, max_hops: int | None = None, n_jobs: int | None = None):
        self.top_k = top_k
        self.max_hops = max_hops
        self.n_jobs = n_jobs

    def fit(self, graph: Graph, labeled: Sequence[int], unlabeled: Sequence[int] | None = None):
        table = influence_scores(graph, labeled, unlabeled, n_jobs=self.n_jobs)
        if self.max_hops is not None:
            far = table.candidates & (table.dist > self.max_hops)
            cand = table.candidates & ~far
            log_score = np.where(far, -np.inf, table.log_score)
            table = InfluenceScoreTable(cand, log_score, table.best_source, table.dist)
        self.scores_ = table
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SelectionShortfallWarning)
            self.selected_ = select_top_k(table, self.top_k)
        self.shortfall_ = [str(w.message) for w in caught if issubclass(w.category, SelectionShortfallWarning)]
        for msg in self.shortfall_:
            warnings.warn(msg, SelectionShortfallWarning, stacklevel=2)
        return self

    def transform(self, graph=None):
        return list(self.selected_)


def save_selection(selected: Sequence[int], path: str | Path) -> None:
    Path(path).write_text(json.dumps([int(v) for v in selected]) + "\n", encoding="utf-8")


def load_selection(path: str | Path) -> list[int]:
    with open(path, encoding="utf-8") as fh:
        return [int(v) for v in json.load(fh)]
