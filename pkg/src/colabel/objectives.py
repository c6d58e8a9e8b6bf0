"""Instruction and odds-ratio preference losses over whole-label probabilities.

``P(y|x)`` here is the probability a classifier assigns to a complete label,
not a token sequence. Losses clamp probabilities to ``[eps, 1 - eps]``; the
raw preference function and ``odds`` reject boundary values instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

DEFAULT_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.1
    epsilon_clip: float = DEFAULT_EPS

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not 0 < self.epsilon_clip < 0.5:
            raise ValueError("epsilon_clip must lie in (0, 0.5)")


def _check_unit(p):
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("probabilities must lie in [0, 1]")
    return p


def _check_open(p):
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)) or np.any(np.isnan(p)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    return p


def clamp(p, eps: float = DEFAULT_EPS):
    return np.clip(_check_unit(p), eps, 1.0 - eps)


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def instruction_loss(p, eps: float = DEFAULT_EPS):
    """Negative log-likelihood of the target label."""
    return _out(-np.log(clamp(p, eps)))


def odds(p):
    p = _check_open(p)
    return _out(p / (1.0 - p))


def log_odds(p):
    p = _check_open(p)
    return np.log(p) - np.log1p(-p)


def orpo_preference_function(p_w, p_l):
    """Log odds ratio of the preferred label over the dispreferred one."""
    return _out(log_odds(p_w) - log_odds(p_l))


# Single-signature hook (p_w, p_l) -> preference margin; only ORPO ships.
PREFERENCE_FUNCTIONS: dict[str, Callable] = {"orpo": orpo_preference_function}


def preference_loss(p_w, p_l, eps: float = DEFAULT_EPS, preference_fn: Callable = orpo_preference_function):
    """``-log sigmoid(g)`` for preference margin ``g``."""
    g = np.asarray(preference_fn(clamp(p_w, eps), clamp(p_l, eps)))
    return _out(np.logaddexp(0.0, -g))


def preference_loss_grad(p_w, p_l, eps: float = DEFAULT_EPS):
    """Analytic ``(dL/dp_w, dL/dp_l)`` of the ORPO loss, evaluated at clamped inputs."""
    pw, pl = clamp(p_w, eps), clamp(p_l, eps)
    s = expit(np.asarray(orpo_preference_function(pw, pl)))
    return _out((s - 1.0) / (pw * (1.0 - pw))), _out((1.0 - s) / (pl * (1.0 - pl)))


def combined_loss(agree_probs: Sequence[float], pref_instances: Sequence[tuple[float, float]],
                  config: LossConfig = LossConfig()) -> float:
    """Mean instruction loss on agreed examples plus ``lam`` times mean preference loss."""
    eps = config.epsilon_clip
    total = 0.0
    if len(agree_probs):
        total += float(np.mean(instruction_loss(np.asarray(agree_probs, dtype=np.float64), eps)))
    if len(pref_instances) and config.lam:
        pw, pl = np.asarray(pref_instances, dtype=np.float64).reshape(-1, 2).T
        total += config.lam * float(np.mean(preference_loss(pw, pl, eps)))
    return total
