"""Synthetic text-attributed graphs for smoke runs and tests."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .graph import Graph, LabelSpace, TextCorpus, write_graph, write_labels, write_texts
from .llm import write_predictions

TOY_CLASSES = ("Databases", "Neural_Networks", "Theory")


def planted_partition(n: int, n_blocks: int, p_in: float, p_out: float, seed: int = 0):
    """Stochastic block model with equal-size blocks; returns ``(graph, block_labels)``."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % n_blocks)
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(len(iu)) < p
    return Graph.from_edges(np.stack([iu[keep], ju[keep]], axis=1), n_nodes=n), labels


def gaussian_features(labels: np.ndarray, n_features: int = 16, separation: float = 1.0, seed: int = 0):
    """Class-mean-shifted Gaussian features: class ``c`` adds ``separation`` on feature ``c``."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(len(labels), n_features))
    X[np.arange(len(labels)), labels % n_features] += separation
    return X


@dataclass
class ToyTAG:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    texts: TextCorpus
    label_space: LabelSpace
    llm_raw: dict[int, str]


def _word_pools(n_classes: int, per_class: int, shared: int):
    cls = [[f"{chr(97 + c)}term{i}" for i in range(per_class)] for c in range(n_classes)]
    common = [f"word{i}" for i in range(shared)]
    return cls, common


def scripted_predictor(text: str, class_pools: list[list[str]], class_names) -> str:
    """Keyword-vote answer in free text.

    Ties go to the tied class whose keyword appears first; a text without any
    keyword yields a non-answer.
    """
    votes = np.zeros(len(class_pools), dtype=int)
    lookup = {w: c for c, pool in enumerate(class_pools) for w in pool}
    order = []
    for tok in text.split():
        if tok in lookup:
            votes[lookup[tok]] += 1
            order.append(lookup[tok])
    if votes.max() == 0:
        return "I cannot tell from this description."
    winner = next(c for c in order if votes[c] == votes.max())
    return f"The center node belongs to {class_names[winner]}."


def make_toy_tag(n: int = 300, class_names=TOY_CLASSES, p_in: float = 0.06, p_out: float = 0.003,
                 doc_len: int = 24, class_word_rate: float = 0.12, confuse_rate: float = 0.08,
                 seed: int = 0) -> ToyTAG:
    """Planted-partition graph whose node texts mix class keywords, shared words and cross-class noise."""
    C = len(class_names)
    graph, labels = planted_partition(n, C, p_in, p_out, seed)
    rng = np.random.default_rng(seed + 1)
    pools, common = _word_pools(C, 12, 60)
    texts = []
    for v in range(n):
        words = []
        for _ in range(doc_len):
            u = rng.random()
            if u < class_word_rate:
                pool = pools[labels[v]]
            elif u < class_word_rate + confuse_rate:
                pool = pools[(labels[v] + rng.integers(1, C)) % C]
            else:
                pool = common
            words.append(pool[rng.integers(len(pool))])
        texts.append(" ".join(words))
    vocab = [w for pool in pools for w in pool] + common
    index = {w: i for i, w in enumerate(vocab)}
    X = np.zeros((n, len(vocab)))
    for v, t in enumerate(texts):
        for w in t.split():
            X[v, index[w]] += 1
    raw = {v: scripted_predictor(t, pools, class_names) for v, t in enumerate(texts)}
    return ToyTAG(graph, X, labels, TextCorpus(tuple(texts)), LabelSpace(tuple(class_names)), raw)


def write_toy_tag(tag: ToyTAG, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "graph": out / "graph.tsv",
        "features": out / "features.csv",
        "labels": out / "labels.csv",
        "label_space": out / "label_space.json",
        "texts": out / "texts.jsonl",
        "llm_pred": out / "llm_pred.jsonl",
    }
    write_graph(tag.graph, paths["graph"])
    np.savetxt(paths["features"], tag.features, delimiter=",", fmt="%d")
    write_labels(tag.labels, tag.label_space, paths["labels"])
    paths["label_space"].write_text(json.dumps(list(tag.label_space.class_names)) + "\n", encoding="utf-8")
    write_texts(tag.texts.texts, paths["texts"])
    write_predictions(tag.llm_raw, paths["llm_pred"])
    return paths


def bundled_toy_dir() -> Path:
    """Directory of the toy dataset shipped with the package."""
    return Path(str(resources.files("colabel") / "data" / "toy"))
