"""Structure-aware judge: SGC feature smoothing plus multinomial logistic regression.

Smoothing uses the symmetric self-loop normalization ``D~^-1/2 (A + I) D~^-1/2``.
This is deliberately not the ``D^-1 A`` operator used for influence bounds.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .graph import Graph, Split

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def normalized_adjacency(graph: Graph) -> sp.csr_matrix:
    A = graph.adjacency() + sp.identity(graph.n_nodes, format="csr")
    d = np.asarray(A.sum(axis=1)).ravel()
    s = sp.diags(1.0 / np.sqrt(d))
    return (s @ A @ s).tocsr()


def propagate(features: np.ndarray, graph: Graph, hops: int) -> np.ndarray:
    if hops < 0:
        raise ValueError("hops must be non-negative")
    X = np.asarray(features, dtype=np.float64)
    if X.shape[0] != graph.n_nodes:
        raise ValueError(f"{X.shape[0]} feature rows for {graph.n_nodes} nodes")
    if hops == 0:
        return X.copy()
    S = normalized_adjacency(graph)
    for _ in range(hops):
        X = S @ X
    return np.asarray(X)


class FeaturePropagator(TransformerMixin, BaseEstimator):
    """Stateless ``S^hops X`` smoothing over a fixed graph."""

    def __init__(self, graph: Graph | None = None, hops: int = 2):
        self.graph = graph
        self.hops = hops

    def fit(self, X, y=None):
        if self.graph is None:
            raise ValueError("FeaturePropagator needs a graph")
        self.n_features_in_ = np.asarray(X).shape[1]
        return self

    def transform(self, X):
        return propagate(check_array(X), self.graph, self.hops)


def cross_entropy_grad(X, Y, W, b):
    """Mean cross-entropy and its gradients for logits ``XW + b`` and one-hot targets ``Y``."""
    Z = X @ W + b
    logp = log_softmax(Z, axis=1)
    m = X.shape[0]
    loss = -np.sum(Y * logp) / m
    G = (np.exp(logp) - Y) / m
    return loss, X.T @ G, G.sum(axis=0)


class SGCJudge(ClassifierMixin, BaseEstimator):
    """Softmax regression trained by full-batch gradient descent on pre-smoothed features.

    The L2 term ``0.5 * weight_decay * ||W||^2`` is applied as a proximal
    shrink after each gradient step so very large decay stays stable. Weights
    start at zero; the objective is convex, so the optimum does not depend on
    the seed, which is kept only for provenance.
    """

    def __init__(self, hops: int = 2, lr: float = 0.2, weight_decay: float = 5e-4, max_epochs: int = 200,
                 patience: int = 100, n_classes: int | None = None, seed: int = 0):
        self.hops = hops
        self.lr = lr
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.patience = patience
        self.n_classes = n_classes
        self.seed = seed

    def fit(self, X, y, eval_set=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.shape[0] == 0:
            raise ValueError("empty training set")
        if len(y) != X.shape[0]:
            raise ValueError("X and y lengths differ")
        if self.lr <= 0 or self.weight_decay < 0 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("hyperparameters must be positive")
        C = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        if y.min() < 0 or y.max() >= C:
            raise ValueError("training labels outside [0, n_classes)")
        Y = np.eye(C)[y]
        W = np.zeros((X.shape[1], C))
        b = np.zeros(C)
        best = (-1.0, W.copy(), b.copy(), 0)
        stale = 0
        self.loss_curve_ = []
        for epoch in range(1, self.max_epochs + 1):
            loss, gW, gb = cross_entropy_grad(X, Y, W, b)
            loss += 0.5 * self.weight_decay * float(np.sum(W * W))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            self.loss_curve_.append(float(loss))
            W = (W - self.lr * gW) / (1.0 + self.lr * self.weight_decay)
            b = b - self.lr * gb
            if eval_set is None:
                continue
            Xv, yv = eval_set
            acc = float(np.mean(np.argmax(np.asarray(Xv) @ W + b, axis=1) == np.asarray(yv))) if len(yv) else 0.0
            # ties keep the later, better-fit weights
            if acc >= best[0]:
                if acc > best[0]:
                    stale = 0
                else:
                    stale += 1
                best = (acc, W.copy(), b.copy(), epoch)
            else:
                stale += 1
            if stale >= self.patience:
                break
        if eval_set is not None:
            _, W, b, self.best_epoch_ = best
            self.best_val_accuracy_ = best[0]
        self.coef_, self.intercept_ = W, b
        self.classes_ = np.arange(C)
        self.n_features_in_ = X.shape[1]
        self.n_epochs_ = len(self.loss_curve_)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.coef_.shape[0]:
            raise ValueError(f"expected {self.coef_.shape[0]} features, got {X.shape[1]}")
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "hops": self.hops,
            "n_features": int(self.coef_.shape[0]),
            "n_classes": int(self.coef_.shape[1]),
            "weights": [float(w) for w in self.coef_.ravel()],
            "bias": [float(v) for v in self.intercept_],
            "hyperparameters": {k: v for k, v in self.get_params().items() if k not in ("hops",)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SGCJudge":
        hp = dict(d.get("hyperparameters", {}))
        hp["n_classes"] = d["n_classes"]
        model = cls(hops=d["hops"], **hp)
        model.coef_ = np.asarray(d["weights"], dtype=np.float64).reshape(d["n_features"], d["n_classes"])
        model.intercept_ = np.asarray(d["bias"], dtype=np.float64)
        model.classes_ = np.arange(d["n_classes"])
        model.n_features_in_ = d["n_features"]
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SGCJudge":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def train_judge(smoothed: np.ndarray, split: Split, labels: np.ndarray, n_classes: int, seed: int = 0,
                **hyper) -> SGCJudge:
    """Fit on ``split.train`` with early stopping on ``split.val`` accuracy."""
    if not split.train:
        raise ValueError("empty train split")
    labels = np.asarray(labels)
    train, val = list(split.train), list(split.val)
    if np.any(labels[train] < 0):
        raise ValueError("train split contains unlabeled nodes")
    eval_set = (smoothed[val], labels[val]) if val else None
    model = SGCJudge(n_classes=n_classes, seed=seed, **hyper)
    return model.fit(smoothed[train], labels[train], eval_set=eval_set)


def write_probs(probs: np.ndarray, path: str | Path, nodes=None) -> None:
    nodes = range(probs.shape[0]) if nodes is None else nodes
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id"] + [f"p_{c}" for c in range(probs.shape[1])])
        for v in nodes:
            w.writerow([int(v)] + [repr(float(p)) for p in probs[v]])


def read_probs(path: str | Path, n_nodes: int, n_classes: int) -> np.ndarray:
    """Load judge probabilities; rows for nodes absent from the file are NaN."""
    P = np.full((n_nodes, n_classes), np.nan)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != n_classes + 1:
            raise ValueError(f"{path}: expected {n_classes} probability columns, got {len(header) - 1}")
        for lineno, row in enumerate(reader, start=2):
            v = int(row[0])
            P[v] = [float(x) for x in row[1:]]
            if np.any(P[v] < 0) or abs(P[v].sum() - 1.0) > 1e-6:
                raise ValueError(f"{path}:{lineno}: row for node {v} is not a probability distribution")
    return P
