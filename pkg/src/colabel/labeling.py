"""Agreement/disagreement co-labeling of selected nodes and selection-quality reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

UNPARSED = -1
MISSING = -2


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """Per-node hard labels with optional probability rows.

    ``labels[v]`` is a class index, ``UNPARSED`` when a text predictor's answer
    could not be mapped to a class, or ``MISSING`` when no prediction exists.
    """

    labels: np.ndarray
    probs: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.probs is not None:
            P = np.asarray(self.probs, dtype=np.float64)
            if P.shape[0] != len(self.labels):
                raise ValueError("probability rows do not match label count")
            object.__setattr__(self, "probs", P)

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "PredictionSet":
        probs = np.asarray(probs, dtype=np.float64)
        labels = np.full(probs.shape[0], MISSING, dtype=np.int64)
        ok = ~np.isnan(probs).any(axis=1)
        labels[ok] = np.argmax(probs[ok], axis=1)
        return cls(labels, probs)

    @classmethod
    def from_mapping(cls, mapping: dict[int, int], n_nodes: int) -> "PredictionSet":
        labels = np.full(n_nodes, MISSING, dtype=np.int64)
        for v, y in mapping.items():
            labels[int(v)] = int(y)
        return cls(labels)

    def check(self) -> None:
        """Hard labels must equal the probability argmax wherever both exist."""
        if self.probs is None:
            return
        parsed = self.labels >= 0
        bad = np.flatnonzero(parsed & (np.argmax(np.nan_to_num(self.probs, nan=-1.0), axis=1) != self.labels))
        if bad.size:
            raise ValueError(f"hard labels disagree with probability argmax at nodes {bad[:10].tolist()}")


@dataclass
class PartitionResult:
    agreed: list[int]
    disagreed: list[int]
    unparsed: list[int]
    disagreed_filtered: list[int] = field(default_factory=list)
    pref_scores: dict[int, float] = field(default_factory=dict)
    tau: float = 0.0

    @property
    def n_selected(self) -> int:
        return len(self.agreed) + len(self.disagreed) + len(self.unparsed)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "agreed": self.agreed,
            "disagreed": [{"node_id": v, "pref_score": self.pref_scores[v]} for v in self.disagreed],
            "disagreed_filtered": [{"node_id": v, "pref_score": self.pref_scores[v]}
                                   for v in self.disagreed_filtered],
            "unparsed": self.unparsed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionResult":
        scores = {int(r["node_id"]): float(r["pref_score"]) for r in d["disagreed"]}
        return cls(
            agreed=[int(v) for v in d["agreed"]],
            disagreed=[int(r["node_id"]) for r in d["disagreed"]],
            unparsed=[int(v) for v in d["unparsed"]],
            disagreed_filtered=[int(r["node_id"]) for r in d["disagreed_filtered"]],
            pref_scores=scores,
            tau=float(d["tau"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PartitionResult":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def partition(gnn: PredictionSet, llm: PredictionSet, selected: Sequence[int]) -> PartitionResult:
    """Split selected nodes by whether the judge and the text predictor agree.

    Nodes whose text-predictor answer is unparsed go to neither set.
    """
    selected = [int(v) for v in selected]
    missing_gnn = [v for v in selected if gnn.labels[v] < 0]
    if missing_gnn:
        raise KeyError(f"judge predictions missing for nodes {missing_gnn[:20]}")
    missing_llm = [v for v in selected if llm.labels[v] == MISSING]
    if missing_llm:
        raise KeyError(f"missing predictions for nodes {missing_llm}")
    agreed, disagreed, unparsed = [], [], []
    for v in sorted(selected):
        if llm.labels[v] == UNPARSED:
            unparsed.append(v)
        elif llm.labels[v] == gnn.labels[v]:
            agreed.append(v)
        else:
            disagreed.append(v)
    return PartitionResult(agreed, disagreed, unparsed)


def preference_score(prob_row, gnn_label: int, llm_label: int) -> float:
    """Judge probability margin of its own label over the text predictor's label."""
    row = np.asarray(prob_row, dtype=np.float64)
    if gnn_label == llm_label:
        raise ValueError("preference score is only defined when the labels differ")
    if int(np.argmax(row)) != gnn_label:
        raise ValueError(f"judge label {gnn_label} is not the argmax of {row.tolist()}")
    return float(row[gnn_label] - row[llm_label])


def preference_scores(disagreed: Sequence[int], probs: np.ndarray, gnn: PredictionSet,
                      llm: PredictionSet) -> dict[int, float]:
    idx = np.asarray(list(disagreed), dtype=np.int64)
    if idx.size == 0:
        return {}
    rows = probs[idx]
    if np.isnan(rows).any():
        v = idx[np.isnan(rows).any(axis=1)][0]
        raise KeyError(f"no judge probability row for node {v}")
    g, l = gnn.labels[idx], llm.labels[idx]
    if np.any(g == l):
        raise ValueError("preference score is only defined when the labels differ")
    if np.any(np.argmax(rows, axis=1) != g):
        v = idx[np.argmax(rows, axis=1) != g][0]
        raise ValueError(f"judge label for node {v} is not its probability argmax")
    r = np.arange(idx.size)
    s = rows[r, g] - rows[r, l]
    return {int(v): float(x) for v, x in zip(idx, s)}


def filter_disagreement(disagreed: Sequence[int], probs: np.ndarray, gnn: PredictionSet,
                        llm: PredictionSet, tau: float) -> list[int]:
    """Disagreed nodes with preference score >= ``tau``, strongest first, ties by node id."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    scores = preference_scores(disagreed, probs, gnn, llm)
    return _filter_scores(scores, tau)


def _filter_scores(scores: dict[int, float], tau: float) -> list[int]:
    kept = [v for v, s in scores.items() if s >= tau]
    return sorted(kept, key=lambda v: (-scores[v], v))


def co_label(gnn: PredictionSet, llm: PredictionSet, selected: Sequence[int], tau: float) -> PartitionResult:
    if gnn.probs is None:
        raise ValueError("judge predictions need probability rows")
    result = partition(gnn, llm, selected)
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    result.pref_scores = preference_scores(result.disagreed, gnn.probs, gnn, llm)
    result.disagreed_filtered = _filter_scores(result.pref_scores, tau)
    result.tau = tau
    return result


class AgreementBound(NamedTuple):
    value: float
    exceeds_max: bool
    degenerate: bool


def agreement_accuracy_bound(p_llm: float, p_gnn: float, n_classes: int) -> AgreementBound:
    """Expected accuracy on agreed nodes for independent annotators with uniform errors.

    Degenerate inputs (an accuracy of exactly 0 or 1) return the limiting value
    with ``degenerate=True``; a zero accuracy dominates because agreement on the
    truth then never happens.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    for p in (p_llm, p_gnn):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"accuracy {p} outside [0, 1]")
    if p_llm == 0.0 or p_gnn == 0.0:
        return AgreementBound(0.0, False, True)
    if p_llm == 1.0 or p_gnn == 1.0:
        return AgreementBound(1.0, 1.0 > max(p_llm, p_gnn), True)
    both = p_llm * p_gnn
    wrong = (1 - p_llm) * (1 - p_gnn) / (n_classes - 1)
    value = both / (both + wrong)
    return AgreementBound(value, value > max(p_llm, p_gnn), False)


@dataclass(frozen=True)
class ErrorDiagnostics:
    n: int
    pearson: float | None
    delta_llm_given_gnn: float | None
    delta_gnn_given_llm: float | None


def error_correlation(gnn: PredictionSet, llm: PredictionSet, truth: np.ndarray,
                      nodes: Sequence[int] | None = None) -> ErrorDiagnostics:
    """Dependence between the two predictors' binary error indicators.

    Only nodes with a known truth and a parsed label from both sides count.
    Undefined quantities (zero variance, empty conditioning event) are ``None``.
    """
    truth = np.asarray(truth)
    idx = np.arange(len(truth)) if nodes is None else np.asarray(list(nodes), dtype=np.int64)
    keep = (truth[idx] >= 0) & (gnn.labels[idx] >= 0) & (llm.labels[idx] >= 0)
    idx = idx[keep]
    if idx.size == 0:
        raise ValueError("no nodes to evaluate")
    g = (gnn.labels[idx] != truth[idx]).astype(np.float64)
    l = (llm.labels[idx] != truth[idx]).astype(np.float64)
    pearson = None
    if g.std() > 0 and l.std() > 0:
        pearson = float(np.mean((g - g.mean()) * (l - l.mean())) / (g.std() * l.std()))
    d_lg = float(l[g == 1].mean() - l.mean()) if g.any() else None
    d_gl = float(g[l == 1].mean() - g.mean()) if l.any() else None
    return ErrorDiagnostics(int(idx.size), pearson, d_lg, d_gl)


def _accuracy(nodes, labels, truth):
    nodes = [v for v in nodes if truth[v] >= 0]
    if not nodes:
        return None
    return float(np.mean([labels[v] == truth[v] for v in nodes]))


def final_labels(result: PartitionResult, gnn: PredictionSet) -> dict[int, int]:
    """Consensus labels on agreed nodes plus judge labels on filtered disagreed nodes."""
    return {v: int(gnn.labels[v]) for v in sorted(result.agreed + result.disagreed_filtered)}


def build_report(result: PartitionResult, gnn: PredictionSet, llm: PredictionSet,
                 truth: np.ndarray | None = None, n_classes: int | None = None,
                 warnings: Sequence[str] = ()) -> dict:
    """JSON-ready selection report.

    Column names follow the usual pseudo-label analysis table: A/D ratio,
    agreement and disagreement accuracy, final set size and accuracy, and
    accuracy of the retained disagreement subset. Accuracies are fractions.
    """
    final = final_labels(result, gnn)
    report = {
        "n_selected": result.n_selected,
        "n_agreed": len(result.agreed),
        "n_disagreed": len(result.disagreed),
        "n_disagreed_filtered": len(result.disagreed_filtered),
        "n_unparsed": len(result.unparsed),
        "tau": result.tau,
        "a_d_ratio": f"{len(result.agreed)}/{len(result.disagreed)}",
        "final_size": len(final),
        "agree_acc": None,
        "disagree_acc_gnn": None,
        "disagree_acc_llm": None,
        "final_acc": None,
        "sel_disagree_acc": None,
        "gnn_acc_selected": None,
        "llm_acc_selected": None,
        "agreement_bound": None,
        "error_correlation": None,
        "warnings": list(warnings),
    }
    if truth is None:
        return report
    truth = np.asarray(truth)
    g, l = gnn.labels, llm.labels
    report["agree_acc"] = _accuracy(result.agreed, g, truth)
    report["disagree_acc_gnn"] = _accuracy(result.disagreed, g, truth)
    report["disagree_acc_llm"] = _accuracy(result.disagreed, l, truth)
    report["final_acc"] = _accuracy(list(final), g, truth)
    report["sel_disagree_acc"] = _accuracy(result.disagreed_filtered, g, truth)
    parsed = result.agreed + result.disagreed
    p_gnn = _accuracy(parsed, g, truth)
    p_llm = _accuracy(parsed, l, truth)
    report["gnn_acc_selected"] = p_gnn
    report["llm_acc_selected"] = p_llm
    if n_classes is not None and p_gnn is not None and p_llm is not None:
        report["agreement_bound"] = agreement_accuracy_bound(p_llm, p_gnn, n_classes)._asdict()
    try:
        report["error_correlation"] = asdict(error_correlation(gnn, llm, truth, parsed))
    except ValueError:
        pass
    return report


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(_clean(report), indent=1, sort_keys=True) + "\n", encoding="utf-8")
