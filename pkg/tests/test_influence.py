import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colabel.graph import Graph
from colabel.influence import (InfluenceScoreTable, InfluenceSelector, SelectionShortfallWarning,
                               brute_force_influence, influence_scores, load_selection, save_selection,
                               select_top_k, shortest_path_profile)
from colabel.verification import random_connected_graph, random_tree

import oracles

PATH = [(0, 1), (1, 2)]
STAR = [(0, 1), (0, 2), (0, 3)]
CYCLE4 = [(0, 1), (1, 2), (2, 3), (3, 0)]
TRIANGLE = [(0, 1), (1, 2), (0, 2)]

# (edges, n, source, target) -> (dist, n_paths, min degree product, bound); frozen from oracles.path_bound
PROFILE_CASES = [
    (PATH, 3, 0, 2, (2, 1, 2, 0.5)),
    (STAR, 4, 1, 2, (2, 1, 3, 1 / 3)),
    (CYCLE4, 4, 0, 2, (2, 2, 4, 0.5)),
]


@pytest.mark.parametrize("edges,n,s,t,expected", PROFILE_CASES)
def test_profile_examples(edges, n, s, t, expected):
    dist, count, degprod, bound = expected
    assert oracles.path_bound(n, edges, s, t) == (dist, count, degprod, oracles.Fraction(bound).limit_denominator())
    p = shortest_path_profile(Graph.from_edges(edges, n_nodes=n), s)
    assert p.dist[t] == dist
    assert math.exp(p.log_path_count[t]) == pytest.approx(count, rel=1e-12)
    assert math.exp(p.min_log_degprod[t]) == pytest.approx(degprod, rel=1e-12)
    assert p.bound[t] == pytest.approx(bound, rel=1e-12)


def test_source_profile_is_trivial():
    p = shortest_path_profile(Graph.from_edges(CYCLE4), 0)
    assert (p.dist[0], p.log_path_count[0], p.min_log_degprod[0]) == (0, 0.0, 0.0)


def test_unreachable_node():
    g = Graph.from_edges([(0, 1)], n_nodes=3)
    p = shortest_path_profile(g, 0)
    assert math.isinf(p.dist[2])
    assert p.log_bound[2] == -math.inf
    assert p.bound[2] == 0.0


@pytest.mark.parametrize("edges,n,s,t,hops,expected", [
    (PATH, 3, 0, 2, 2, 0.5),
    (TRIANGLE, 3, 0, 1, 1, 0.5),
    (STAR, 4, 1, 2, 2, 1 / 3),
    (CYCLE4, 4, 0, 2, 2, 0.5),
])
def test_brute_force_examples(edges, n, s, t, hops, expected):
    assert float(oracles.walk_matrix_entry(n, edges, s, t, hops)) == pytest.approx(expected, rel=1e-15)
    assert brute_force_influence(Graph.from_edges(edges, n_nodes=n), s, t, hops) == pytest.approx(expected, rel=1e-12)


def test_brute_force_identity_and_guard():
    g = Graph.from_edges(CYCLE4)
    assert brute_force_influence(g, 1, 1, 0) == 1.0
    assert brute_force_influence(g, 1, 2, 0) == 0.0
    with pytest.raises(ValueError):
        brute_force_influence(Graph.from_edges([(0, 1)], n_nodes=201), 0, 1, 1)


def test_profile_matches_path_enumeration_on_random_graphs():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(4, 12))
        g = random_connected_graph(rng, n, 0.35)
        edges = [tuple(map(int, e)) for e in g.edges()]
        p = shortest_path_profile(g, 0)
        for t in range(1, n):
            dist, count, degprod, _ = oracles.path_bound(n, edges, 0, t)
            assert p.dist[t] == dist
            assert math.exp(p.log_path_count[t]) == pytest.approx(count, rel=1e-9)
            assert math.exp(p.min_log_degprod[t]) == pytest.approx(degprod, rel=1e-9)


def test_bound_sound_and_tight_on_trees():
    rng = np.random.default_rng(11)
    for _ in range(10):
        g = random_connected_graph(rng, 12, 0.3)
        for s in range(3):
            p = shortest_path_profile(g, s)
            for t in range(g.n_nodes):
                if t != s:
                    assert brute_force_influence(g, s, t, int(p.dist[t])) <= p.bound[t] + 1e-12
        tree = random_tree(rng, 15)
        p = shortest_path_profile(tree, 0)
        for t in range(1, 15):
            assert brute_force_influence(tree, 0, t, int(p.dist[t])) == pytest.approx(p.bound[t], abs=1e-12)


@pytest.mark.parametrize("g", [Graph.from_edges([(i, (i + 1) % 9) for i in range(9)]),
                               Graph.from_edges([(i, j) for i in range(6) for j in range(i + 1, 6)])])
def test_vertex_transitive_profiles_agree(g):
    profiles = [shortest_path_profile(g, s) for s in range(g.n_nodes)]
    for s, p in enumerate(profiles):
        for q in profiles:
            for t in range(g.n_nodes):
                same = [u for u in range(g.n_nodes) if q.dist[u] == p.dist[t]]
                assert all(q.log_bound[u] == pytest.approx(p.log_bound[t], abs=1e-12) for u in same)


def test_log_space_handles_huge_path_counts():
    # stacked complete bipartite layers of width 2: a node in layer L has 2^(L-1) shortest paths
    layers = 1011
    edges = [(layer * 2 + a, (layer + 1) * 2 + b) for layer in range(layers) for a in (0, 1) for b in (0, 1)]
    g = Graph.from_edges(edges)
    p = shortest_path_profile(g, 0)
    t = layers * 2
    assert p.log_path_count[t] == pytest.approx((layers - 1) * math.log(2), rel=1e-9)
    assert p.log_path_count[t] > 700
    assert np.all(np.isfinite(p.log_bound[1:]))


def test_scores_single_source_and_monotone():
    rng = np.random.default_rng(5)
    g = random_connected_graph(rng, 20, 0.2)
    one = influence_scores(g, [0])
    p = shortest_path_profile(g, 0)
    assert np.array_equal(one.log_score[1:], p.log_bound[1:])
    two = influence_scores(g, [0, 7])
    cand = two.candidates
    assert np.all(two.log_score[cand] >= one.log_score[cand])
    with pytest.raises(ValueError):
        influence_scores(g, [])


def test_isolated_unlabeled_scores_zero_and_is_never_selected():
    g = Graph.from_edges([(0, 1), (1, 2)], n_nodes=4)
    table = influence_scores(g, [0])
    assert table.score[3] == 0.0
    with pytest.warns(SelectionShortfallWarning):
        sel = select_top_k(table, 10)
    assert 3 not in sel
    assert sel == [1, 2]


def test_scores_parallel_identical():
    rng = np.random.default_rng(9)
    g = random_connected_graph(rng, 40, 0.1)
    a = influence_scores(g, range(0, 40, 4))
    b = influence_scores(g, range(0, 40, 4), n_jobs=4)
    assert a.log_score.tobytes() == b.log_score.tobytes()
    assert np.array_equal(a.best_source, b.best_source)


def _table(scores):
    n = len(scores)
    return InfluenceScoreTable(np.ones(n, bool), np.log(np.asarray(scores, float)),
                               np.zeros(n, np.int64), np.ones(n))


def test_top_k_ties_and_argmax():
    t = _table([0.5, 0.5, 0.1])
    assert select_top_k(t, 2) == [0, 1]
    assert select_top_k(_table([0.1, 0.9, 0.3]), 1) == [1]
    with pytest.raises(ValueError):
        select_top_k(t, 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from([0.1, 0.2, 0.25, 0.5, 1.0]), min_size=1, max_size=25), st.integers(1, 30))
def test_top_k_ordering_property(scores, k):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SelectionShortfallWarning)
        sel = select_top_k(_table(scores), k)
    assert len(sel) == min(k, len(scores))
    keys = [(-scores[v], v) for v in sel]
    assert keys == sorted(keys)
    if sel:
        worst = (-scores[sel[-1]], sel[-1])
        assert all((-scores[v], v) >= worst for v in range(len(scores)) if v not in sel)


def test_selector_and_io(tmp_path):
    rng = np.random.default_rng(2)
    g = random_connected_graph(rng, 30, 0.15)
    sel = InfluenceSelector(top_k=5).fit(g, [0, 1])
    assert len(sel.selected_) == 5
    assert sel.get_params()["top_k"] == 5
    sel.scores_.to_csv(tmp_path / "s.csv")
    back = InfluenceScoreTable.from_csv(tmp_path / "s.csv", g.n_nodes)
    assert np.array_equal(back.log_score, sel.scores_.log_score)
    save_selection(sel.selected_, tmp_path / "sel.json")
    assert load_selection(tmp_path / "sel.json") == sel.selected_


def test_selector_hop_prefilter():
    g = Graph.from_edges([(i, i + 1) for i in range(9)])
    sel = InfluenceSelector(top_k=10, max_hops=2)
    with pytest.warns(SelectionShortfallWarning):
        sel.fit(g, [0])
    assert sel.selected_ == [1, 2]
