"""Optimal per-transition sampling weights for multi-agent prioritized replay.

The weight of a transition is the product of three terms::

    |Q_k - y| * exp(-|Q_k - Q*|) * f(pi)

where ``y`` is the fixed Bellman target, ``Q*`` an optimal-value estimate and
``f`` the joint action probability function

    f(p) = 1 + sum_i prod_{j != i} p_j - n * prod_i p_i.

``f`` peaks at 2 when exactly one agent's action probability is 0 and all
others are 1, so transitions where one agent deviates from its teammates are
favoured.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightInputs:
    q_k: float
    bellman_target: float
    q_star_estimate: float
    action_probs: Sequence[float]


def _leave_one_out_products(p: np.ndarray) -> np.ndarray:
    """prod_{j != i} p_j along the last axis, without dividing (p may contain zeros)."""
    n = p.shape[-1]
    ones = np.ones(p.shape[:-1] + (1,), dtype=p.dtype)
    prefix = np.cumprod(np.concatenate([ones, p[..., : n - 1]], axis=-1), axis=-1)
    suffix = np.cumprod(np.concatenate([ones, p[..., :0:-1]], axis=-1), axis=-1)[..., ::-1]
    return prefix * suffix


def f_pi_batch(probs: np.ndarray) -> np.ndarray:
    """Vectorised ``f`` over the last axis of ``probs`` (shape ``(..., n)``)."""
    p = np.asarray(probs, dtype=np.float64)
    if p.shape[-1] < 2:
        raise ValueError("need at least two agents")
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise ValueError("action probabilities must lie in [0, 1]")
    n = p.shape[-1]
    return 1.0 + _leave_one_out_products(p).sum(axis=-1) - n * np.prod(p, axis=-1)


def f_pi(action_probs: Sequence[float]) -> float:
    return float(f_pi_batch(np.asarray(action_probs, dtype=np.float64)))


def optimal_weight_batch(
    q_k: np.ndarray,
    bellman_target: np.ndarray,
    q_star: np.ndarray,
    action_probs: np.ndarray,
) -> np.ndarray:
    q_k = np.asarray(q_k, dtype=np.float64)
    bellman_target = np.asarray(bellman_target, dtype=np.float64)
    q_star = np.asarray(q_star, dtype=np.float64)
    for name, arr in (("q_k", q_k), ("bellman_target", bellman_target), ("q_star", q_star)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite {name}")
    bellman_error = np.abs(q_k - bellman_target)
    value_enhancement = np.exp(-np.abs(q_k - q_star))
    return bellman_error * value_enhancement * f_pi_batch(action_probs)


def optimal_weight(inputs: WeightInputs) -> float:
    return float(optimal_weight_batch(
        inputs.q_k, inputs.bellman_target, inputs.q_star_estimate,
        np.asarray(inputs.action_probs, dtype=np.float64),
    ))


def normalize_batch(weights) -> np.ndarray:
    """Rescale to batch mean 1. An all-zero batch falls back to all ones."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        return w.copy()
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0.0:
        log.warning("degenerate all-zero weight batch of size %d; using uniform weights", w.size)
        return np.ones_like(w)
    return w * (w.size / total)


def greedy_actions(q_values: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest action index."""
    return np.argmax(q_values, axis=-1)


def policy_prob_batch(q_values: np.ndarray, chosen: np.ndarray, epsilon: float) -> np.ndarray:
    """Probability of ``chosen`` under the epsilon-greedy policy induced by ``q_values``."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon out of [0,1]: {epsilon}")
    q_values = np.asarray(q_values)
    n_actions = q_values.shape[-1]
    is_greedy = greedy_actions(q_values) == np.asarray(chosen)
    return epsilon / n_actions + (1.0 - epsilon) * is_greedy


def policy_prob(q_values: Sequence[float], chosen: int, epsilon: float) -> float:
    q = np.asarray(q_values, dtype=np.float64)
    if not 0 <= chosen < q.size:
        raise ValueError(f"action {chosen} out of range")
    return float(policy_prob_batch(q, np.asarray(chosen), epsilon))
