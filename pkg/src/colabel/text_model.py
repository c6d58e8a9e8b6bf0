"""Desk-scale stand-in for LLM fine-tuning: bag-of-words softmax trained on the combined objective.

Agreed nodes contribute a cross-entropy term; filtered disagreed nodes
contribute an odds-ratio preference term weighted by ``lam``. Both terms share
the same weights and are optimized jointly by full-batch gradient descent.
The loss is computed from logits so it stays exact where clamped
probabilities would flatten it.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, log_softmax, logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .judge import TrainingError


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def build_vocab(texts: Sequence[str], min_freq: int = 2) -> list[str]:
    counts = Counter(tok for t in texts for tok in tokenize(t))
    return sorted(tok for tok, c in counts.items() if c >= min_freq)


def featurize(text: str, vocab: Sequence[str] | dict[str, int]) -> np.ndarray:
    """Term counts over ``vocab``; unknown tokens are dropped."""
    index = vocab if isinstance(vocab, dict) else {w: i for i, w in enumerate(vocab)}
    out = np.zeros(len(index))
    for tok in tokenize(text):
        i = index.get(tok)
        if i is not None:
            out[i] += 1
    return out


def featurize_corpus(texts: Sequence[str], vocab: Sequence[str]) -> sp.csr_matrix:
    index = {w: i for i, w in enumerate(vocab)}
    rows, cols = [], []
    for r, text in enumerate(texts):
        for tok in tokenize(text):
            i = index.get(tok)
            if i is not None:
                rows.append(r)
                cols.append(i)
    data = np.ones(len(rows))
    return sp.csr_matrix((data, (rows, cols)), shape=(len(texts), len(index)))


@dataclass
class Batch:
    """Featurized training data: agreed rows with targets, preference rows with (chosen, rejected)."""

    X_agree: np.ndarray
    y_agree: np.ndarray
    X_pref: np.ndarray
    chosen: np.ndarray
    rejected: np.ndarray


def _log_odds_and_grad(Z: np.ndarray, target: np.ndarray):
    """Log odds of ``target`` per row and its gradient with respect to the logits.

    d/dz_j log(p_t / (1 - p_t)) = [j == t] - [j != t] * p_j / (1 - p_t)
    """
    n, C = Z.shape
    rows = np.arange(n)
    lse = logsumexp(Z, axis=1)
    masked = Z.copy()
    masked[rows, target] = -np.inf
    lse_rest = logsumexp(masked, axis=1)
    log_p = Z[rows, target] - lse
    log_1mp = lse_rest - lse
    # p_j / (1 - p_t) for j != t
    share = np.exp(masked - lse_rest[:, None])
    grad = -share
    grad[rows, target] = 1.0
    return log_p - log_1mp, grad


def combined_objective(W: np.ndarray, b: np.ndarray, batch: Batch, lam: float, weight_decay: float = 0.0):
    """Combined loss, instruction term, preference term, and gradients ``(dW, db)``."""
    C = W.shape[1]
    dW = weight_decay * W
    db = np.zeros(C)
    inst = pref = 0.0
    if len(batch.y_agree):
        Z = batch.X_agree @ W + b
        logp = log_softmax(Z, axis=1)
        n = len(batch.y_agree)
        inst = -float(np.mean(logp[np.arange(n), batch.y_agree]))
        G = np.exp(logp)
        G[np.arange(n), batch.y_agree] -= 1.0
        G /= n
        dW = dW + batch.X_agree.T @ G
        db = db + G.sum(axis=0)
    if len(batch.chosen) and lam:
        Z = batch.X_pref @ W + b
        lo_w, g_w = _log_odds_and_grad(Z, batch.chosen)
        lo_l, g_l = _log_odds_and_grad(Z, batch.rejected)
        g = lo_w - lo_l
        n = len(g)
        pref = float(np.mean(np.logaddexp(0.0, -g)))
        G = ((expit(g) - 1.0) / n)[:, None] * (g_w - g_l)
        dW = dW + lam * (batch.X_pref.T @ G)
        db = db + lam * G.sum(axis=0)
    total = inst + lam * pref + 0.5 * weight_decay * float(np.sum(W * W))
    return total, inst, pref, dW, db


@dataclass
class TrainingCurve:
    loss: list[float] = field(default_factory=list)
    instruction: list[float] = field(default_factory=list)
    preference: list[float] = field(default_factory=list)
    val_accuracy: list[float | None] = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "instruction", "preference", "val_accuracy"])
            for i in range(len(self)):
                acc = self.val_accuracy[i]
                w.writerow([i + 1, repr(self.loss[i]), repr(self.instruction[i]), repr(self.preference[i]),
                            "" if acc is None else repr(acc)])


class WeaklySupervisedTextClassifier(ClassifierMixin, BaseEstimator):
    """Bag-of-words softmax classifier trained on agreed labels plus preference pairs.

    Parameters
    ----------
    n_classes : int
        Size of the label space.
    lam : float
        Weight of the preference term.
    lr, epochs : float, int
        Full-batch gradient-descent step size and epoch budget.
    patience : int or None
        Early-stop patience on validation accuracy, used only when ``fit`` gets an
        ``eval_set``.
    min_freq : int
        Minimum token count for the vocabulary.
    init_scale : float
        Standard deviation of the seeded Gaussian weight initialization.
    """

    def __init__(self, n_classes: int = 2, lam: float = 0.1, lr: float = 0.5, epochs: int = 200,
                 weight_decay: float = 0.0, patience: int | None = 50, min_freq: int = 2,
                 init_scale: float = 0.01, seed: int = 0):
        self.n_classes = n_classes
        self.lam = lam
        self.lr = lr
        self.epochs = epochs
        self.weight_decay = weight_decay
        self.patience = patience
        self.min_freq = min_freq
        self.init_scale = init_scale
        self.seed = seed

    def _features(self, texts):
        return featurize_corpus(texts, self.vocab_).toarray()

    def make_batch(self, texts, y, preferences=None) -> Batch:
        pref_texts, chosen, rejected = preferences if preferences is not None else ([], [], [])
        return Batch(
            self._features(list(texts)) if len(texts) else np.zeros((0, len(self.vocab_))),
            np.asarray(y, dtype=np.int64).reshape(-1),
            self._features(list(pref_texts)) if len(pref_texts) else np.zeros((0, len(self.vocab_))),
            np.asarray(chosen, dtype=np.int64).reshape(-1),
            np.asarray(rejected, dtype=np.int64).reshape(-1),
        )

    def fit(self, X, y, preferences=None, eval_set=None):
        """Train on agreed texts ``X`` with labels ``y``.

        ``preferences`` is ``(texts, chosen, rejected)``; ``eval_set`` is
        ``(texts, labels)`` for early stopping.
        """
        X, y = list(X), np.asarray(y, dtype=np.int64).reshape(-1)
        pref_texts, chosen, rejected = preferences if preferences is not None else ([], [], [])
        if len(X) != len(y):
            raise ValueError("X and y lengths differ")
        if not len(X) and (self.lam == 0 or not len(pref_texts)):
            raise ValueError("nothing to optimize: no agreed examples and no weighted preference pairs")
        for arr in (y, np.asarray(chosen, dtype=np.int64), np.asarray(rejected, dtype=np.int64)):
            if len(arr) and (arr.min() < 0 or arr.max() >= self.n_classes):
                raise ValueError("label outside the label space")
        if np.any(np.asarray(chosen) == np.asarray(rejected)):
            raise ValueError("a preference pair has chosen == rejected")

        self.vocab_ = build_vocab(X + list(pref_texts), self.min_freq)
        batch = self.make_batch(X, y, preferences)
        rng = np.random.default_rng(self.seed)
        W = rng.normal(0.0, self.init_scale, size=(len(self.vocab_), self.n_classes))
        b = np.zeros(self.n_classes)
        Xv = yv = None
        if eval_set is not None:
            Xv, yv = self._features(list(eval_set[0])), np.asarray(eval_set[1])

        curve = TrainingCurve()
        best = (-1.0, W, b)
        stale = 0
        for epoch in range(1, self.epochs + 1):
            total, inst, pref, dW, db = combined_objective(W, b, batch, self.lam, self.weight_decay)
            if not np.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            W = W - self.lr * dW
            b = b - self.lr * db
            acc = None
            if Xv is not None:
                acc = float(np.mean(np.argmax(Xv @ W + b, axis=1) == yv))
            curve.loss.append(total)
            curve.instruction.append(inst)
            curve.preference.append(pref)
            curve.val_accuracy.append(acc)
            if acc is not None and self.patience is not None:
                if acc > best[0]:
                    best, stale = (acc, W, b), 0
                else:
                    stale += 1
                    if stale >= self.patience:
                        break
        if Xv is not None and self.patience is not None:
            _, W, b = best
        self.coef_, self.intercept_ = W, b
        self.classes_ = np.arange(self.n_classes)
        self.curve_ = curve
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return self._features(list(X)) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return np.exp(log_softmax(self.decision_function(X), axis=1))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {"vocab": self.vocab_, "weights": self.coef_.tolist(), "bias": self.intercept_.tolist(),
                "config": self.get_params()}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "WeaklySupervisedTextClassifier":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        model = cls(**d["config"])
        model.vocab_ = list(d["vocab"])
        model.coef_ = np.asarray(d["weights"], dtype=np.float64).reshape(len(model.vocab_), -1)
        model.intercept_ = np.asarray(d["bias"], dtype=np.float64)
        model.classes_ = np.arange(model.n_classes)
        return model


def train_weakly_supervised(agree_examples: Sequence[tuple[str, int]],
                            pref_examples: Sequence[tuple[str, int, int]],
                            n_classes: int, seed: int = 0, eval_set=None, **config):
    """Functional wrapper returning ``(model, curve)``."""
    texts = [t for t, _ in agree_examples]
    y = [c for _, c in agree_examples]
    prefs = ([t for t, _, _ in pref_examples], [w for _, w, _ in pref_examples],
             [l for _, _, l in pref_examples])
    model = WeaklySupervisedTextClassifier(n_classes=n_classes, seed=seed, **config)
    model.fit(texts, y, preferences=prefs, eval_set=eval_set)
    return model, model.curve_


def numerical_gradient(W, b, batch: Batch, lam: float, weight_decay: float = 0.0, epsilon: float = 1e-5):
    def f(W_, b_):
        return combined_objective(W_, b_, batch, lam, weight_decay)[0]

    gW = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += epsilon
        Wm[idx] -= epsilon
        gW[idx] = (f(Wp, b) - f(Wm, b)) / (2 * epsilon)
    gb = np.zeros_like(b)
    for j in range(len(b)):
        bp, bm = b.copy(), b.copy()
        bp[j] += epsilon
        bm[j] -= epsilon
        gb[j] = (f(W, bp) - f(W, bm)) / (2 * epsilon)
    return gW, gb


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|)``; entries where both are below ``floor`` count as exact."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = np.maximum(np.abs(a), np.abs(n))
    live = scale > floor
    if not live.any():
        return 0.0
    return float(np.max(np.abs(a - n)[live] / scale[live]))


def grad_check(model: WeaklySupervisedTextClassifier, batch: Batch, epsilon: float = 1e-5,
               lam: float | None = None) -> float:
    """Max relative error between analytic and central-difference gradients of the combined loss."""
    lam = model.lam if lam is None else lam
    W, b = model.coef_, model.intercept_
    _, _, _, dW, db = combined_objective(W, b, batch, lam, model.weight_decay)
    nW, nb = numerical_gradient(W, b, batch, lam, model.weight_decay, epsilon)
    return max(relative_error(dW, nW), relative_error(db, nb))
