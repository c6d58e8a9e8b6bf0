"""Noisy two-annotator simulator for checking agreement accuracy and tau filtering.

Each node draws a uniform true class. A text predictor and a judge are each
correct with their own probability, otherwise they pick a wrong class
uniformly, independently of each other. The judge also emits a probability
row: a Beta draw ``q`` (different parameters for correct and wrong nodes) sets
the top-class mass to ``1/C + (1 - 1/C) * q`` and the rest is spread evenly.
With that mapping the judge's preference score against any other class is
exactly ``q``.

Random numbers come from per-block generators seeded by ``(seed, block)``, so
any assignment of blocks to workers reproduces the sequential result.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .labeling import (PredictionSet, agreement_accuracy_bound, co_label, error_correlation,
                       filter_disagreement)

BLOCK_SIZE = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    n: int = 200_000
    n_classes: int = 7
    p_llm: float = 0.8
    p_gnn: float = 0.7
    confidence_correct: tuple[float, float] = (8.0, 2.0)
    confidence_wrong: tuple[float, float] = (2.0, 2.0)
    seed: int = 0
    # correlated-error mode: a shared "hard" flag scales both accuracies down
    hard_fraction: float = 0.0
    hard_scale: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        for p in (self.p_llm, self.p_gnn):
            if not 0.0 <= p <= 1.0:
                raise ValueError("accuracies must lie in [0, 1]")
        if not 0.0 <= self.hard_fraction < 1.0 or not 0.0 <= self.hard_scale <= 1.0:
            raise ValueError("hard_fraction must lie in [0, 1) and hard_scale in [0, 1]")
        for p in (self.p_llm, self.p_gnn):
            if self.hard_fraction and self._easy_accuracy(p) > 1.0:
                raise ValueError("correlated mode cannot preserve this accuracy; lower hard_scale")

    @property
    def above_chance(self) -> bool:
        return self.p_llm > 1 / self.n_classes and self.p_gnn > 1 / self.n_classes

    def _easy_accuracy(self, p: float) -> float:
        f = self.hard_fraction
        return (p - f * p * self.hard_scale) / (1 - f)


@dataclass
class SimResult:
    config: SimConfig
    truth: np.ndarray
    llm_pred: np.ndarray
    gnn_pred: np.ndarray
    gnn_probs: np.ndarray

    @property
    def gnn(self) -> PredictionSet:
        return PredictionSet(self.gnn_pred, self.gnn_probs)

    @property
    def llm(self) -> PredictionSet:
        return PredictionSet(self.llm_pred)

    def agreement(self) -> tuple[int, float]:
        """Size and empirical accuracy of the agreement set."""
        agree = self.llm_pred == self.gnn_pred
        n = int(agree.sum())
        acc = float(np.mean(self.gnn_pred[agree] == self.truth[agree])) if n else math.nan
        return n, acc


def _annotate(rng, truth, acc, C):
    correct = rng.random(len(truth)) < acc
    # shift by 1..C-1 lands uniformly on a wrong class
    wrong = (truth + rng.integers(1, C, size=len(truth))) % C
    return np.where(correct, truth, wrong), correct


def _simulate_block(config: SimConfig, block: int, size: int):
    C = config.n_classes
    rng = np.random.default_rng([config.seed, block])
    truth = rng.integers(0, C, size=size)
    p_llm = np.full(size, config.p_llm)
    p_gnn = np.full(size, config.p_gnn)
    if config.hard_fraction:
        hard = rng.random(size) < config.hard_fraction
        for arr, p in ((p_llm, config.p_llm), (p_gnn, config.p_gnn)):
            arr[hard] = p * config.hard_scale
            arr[~hard] = config._easy_accuracy(p)
    llm, _ = _annotate(rng, truth, p_llm, C)
    gnn, gnn_ok = _annotate(rng, truth, p_gnn, C)
    q = np.where(gnn_ok, rng.beta(*config.confidence_correct, size=size),
                 rng.beta(*config.confidence_wrong, size=size))
    # Beta draws can be exactly 0 in floating point; keep the argmax strict
    q = np.maximum(q, np.finfo(float).tiny)
    top = 1.0 / C + (1.0 - 1.0 / C) * q
    probs = np.repeat(((1.0 - top) / (C - 1))[:, None], C, axis=1)
    probs[np.arange(size), gnn] = top
    probs /= probs.sum(axis=1, keepdims=True)
    return truth, llm, gnn, probs


def simulate(config: SimConfig, n_jobs: int | None = None) -> SimResult:
    sizes = [min(BLOCK_SIZE, config.n - s) for s in range(0, config.n, BLOCK_SIZE)]
    jobs = list(enumerate(sizes))
    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(lambda j: _simulate_block(config, *j), jobs))
    else:
        parts = [_simulate_block(config, *j) for j in jobs]
    truth, llm, gnn, probs = (np.concatenate(x) for x in zip(*parts))
    return SimResult(config, truth, llm, gnn, probs)


def tau_sweep(result: SimResult, taus: Sequence[float]) -> list[dict]:
    """Size and judge accuracy of the filtered disagreement set for each threshold."""
    disagreed = np.flatnonzero(result.llm_pred != result.gnn_pred)
    if disagreed.size == 0:
        raise ValueError("simulation produced no disagreement")
    gnn, llm = result.gnn, result.llm
    rows = []
    for tau in taus:
        kept = filter_disagreement(disagreed.tolist(), result.gnn_probs, gnn, llm, tau)
        kept = np.asarray(kept, dtype=np.int64)
        acc = float(np.mean(result.gnn_pred[kept] == result.truth[kept])) if kept.size else math.nan
        rows.append({"tau": float(tau), "size": int(kept.size), "fraction": kept.size / disagreed.size,
                     "accuracy": acc})
    return rows


def write_sweep_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["tau", "size", "fraction", "accuracy"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def selection_summary(result: SimResult, tau: float) -> dict:
    """Accuracy of the final selected set against single-annotator baselines.

    Baselines are each annotator's accuracy on the same final nodes and on all
    nodes (the expected accuracy of a random same-size subset).
    """
    n = len(result.truth)
    part = co_label(result.gnn, result.llm, range(n), tau)
    final = np.asarray(sorted(part.agreed + part.disagreed_filtered), dtype=np.int64)
    truth = result.truth
    return {
        "tau": tau,
        "final_size": int(final.size),
        "final_acc": float(np.mean(result.gnn_pred[final] == truth[final])),
        "llm_acc_same_nodes": float(np.mean(result.llm_pred[final] == truth[final])),
        "gnn_acc_same_nodes": float(np.mean(result.gnn_pred[final] == truth[final])),
        "llm_acc_all": float(np.mean(result.llm_pred == truth)),
        "gnn_acc_all": float(np.mean(result.gnn_pred == truth)),
        "agree_acc": float(np.mean(truth[part.agreed] == result.gnn_pred[part.agreed])),
        "sel_disagree_acc": float(np.mean(truth[part.disagreed_filtered]
                                          == result.gnn_pred[part.disagreed_filtered]))
        if part.disagreed_filtered else None,
    }


def bound_violation_scan(p_llm_grid: Sequence[float], p_gnn_grid: Sequence[float], n_classes: int = 7,
                         n: int = 100_000, seed: int = 0, sigmas: float = 3.0, **sim_kwargs) -> dict:
    """Check empirical agreement accuracy against the analytic value cell by cell.

    A cell is a violation when accuracy falls more than ``sigmas`` binomial
    standard errors below the analytic value, or (for cells where both
    annotators beat chance) below ``max(p_llm, p_gnn)``.
    """
    cells = []
    for i, pl in enumerate(p_llm_grid):
        for j, pg in enumerate(p_gnn_grid):
            cfg = SimConfig(n=n, n_classes=n_classes, p_llm=pl, p_gnn=pg,
                            seed=seed * 1_000_003 + i * 1009 + j, **sim_kwargs)
            res = simulate(cfg)
            n_agree, acc = res.agreement()
            bound = agreement_accuracy_bound(pl, pg, n_classes)
            se = math.sqrt(bound.value * (1 - bound.value) / n_agree) if n_agree else math.inf
            flagged = not cfg.above_chance
            below_bound = n_agree > 0 and acc < bound.value - sigmas * se
            below_max = (not flagged) and n_agree > 0 and acc < max(pl, pg) - sigmas * se
            cells.append({
                "p_llm": pl, "p_gnn": pg, "n_agreed": n_agree, "accuracy": acc,
                "bound": bound.value, "stderr": se, "flagged_below_chance": flagged,
                "violation": bool(below_bound or below_max),
            })
    violations = [c for c in cells if c["violation"]]
    return {"n_classes": n_classes, "n": n, "sigmas": sigmas, "cells": cells,
            "n_violations": len(violations), "violations": violations}


def independence_check(result: SimResult) -> dict:
    from dataclasses import asdict
    return asdict(error_correlation(result.gnn, result.llm, result.truth))
