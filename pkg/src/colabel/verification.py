"""Oracle checks of the influence bound on random graphs and of agreement accuracy by simulation."""

from __future__ import annotations

import math

import numpy as np
from scipy.sparse.csgraph import connected_components

from .graph import Graph
from .influence import brute_force_influence, shortest_path_profile
from .simulation import bound_violation_scan


def random_connected_graph(rng: np.random.Generator, n: int, p: float, max_tries: int = 1000) -> Graph:
    """Erdos-Renyi ``G(n, p)`` resampled until connected."""
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(max_tries):
        keep = rng.random(len(iu)) < p
        g = Graph.from_edges(np.stack([iu[keep], ju[keep]], axis=1), n_nodes=n)
        if connected_components(g.adjacency(), directed=False)[0] == 1:
            return g
    raise RuntimeError(f"no connected G({n}, {p}) after {max_tries} tries")


def random_tree(rng: np.random.Generator, n: int) -> Graph:
    """Random recursive tree: node ``i`` attaches to a uniform earlier node."""
    parents = [int(rng.integers(0, i)) for i in range(1, n)]
    return Graph.from_edges([(p, i) for i, p in enumerate(parents, start=1)], n_nodes=n)


def _pair_checks(graph: Graph, sources, atol: float):
    worst_slack = math.inf
    worst_gap = 0.0
    violations = []
    for s in sources:
        prof = shortest_path_profile(graph, int(s))
        bound = prof.bound
        for t in range(graph.n_nodes):
            if t == s or not np.isfinite(prof.dist[t]):
                continue
            exact = brute_force_influence(graph, int(s), t, int(prof.dist[t]))
            slack = bound[t] - exact
            worst_slack = min(worst_slack, slack)
            worst_gap = max(worst_gap, abs(slack))
            if exact > bound[t] + atol:
                violations.append((int(s), t, exact, float(bound[t])))
    return worst_slack, worst_gap, violations


def check_influence_bounds(n_graphs: int = 100, n_trees: int = 50, max_nodes: int = 50, n_sources: int = 5,
                           seed: int = 0, atol: float = 1e-12) -> dict:
    """Compare the path-count bound with ``(D^-1 A)^h`` entries at the shortest distance ``h``.

    On general graphs the walk-matrix entry must not exceed the bound; on trees
    the shortest path is the only such walk, so the two must coincide.
    """
    rng = np.random.default_rng(seed)
    graph_viol, tree_viol = [], []
    min_slack, tree_gap, pairs = math.inf, 0.0, 0
    for _ in range(n_graphs):
        n = int(rng.integers(5, max_nodes + 1))
        g = random_connected_graph(rng, n, float(rng.uniform(0.1, 0.4)))
        sources = rng.choice(n, size=min(n_sources, n), replace=False)
        slack, _, viol = _pair_checks(g, sources, atol)
        min_slack = min(min_slack, slack)
        graph_viol += viol
        pairs += len(sources) * (n - 1)
    for _ in range(n_trees):
        n = int(rng.integers(2, max_nodes + 1))
        g = random_tree(rng, n)
        sources = rng.choice(n, size=min(n_sources, n), replace=False)
        _, gap, viol = _pair_checks(g, sources, atol)
        tree_gap = max(tree_gap, gap)
        tree_viol += viol
        pairs += len(sources) * (n - 1)
    return {
        "pairs_checked": pairs,
        "min_slack_graphs": min_slack,
        "max_abs_gap_trees": tree_gap,
        "graph_violations": graph_viol,
        "tree_violations": tree_viol,
        "tree_equal": bool(tree_gap <= atol),
        "ok": bool(not graph_viol and tree_gap <= atol),
    }


def default_agreement_scan(n: int = 100_000, n_classes: int = 7, seed: int = 0) -> dict:
    grid = [0.3, 0.45, 0.6, 0.75, 0.9]
    return bound_violation_scan(grid, grid, n_classes=n_classes, n=n, seed=seed)
