"""Agent Q-network and monotonic mixer with hand-written backward passes.

Parameters are plain dicts of float64 arrays keyed ``agent.*`` and ``mix.*``.
Every ``*_forward`` returns ``(output, cache)`` and the matching ``*_backward``
consumes the cache plus the upstream gradient.
"""
from __future__ import annotations

import numpy as np

Params = dict[str, np.ndarray]


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_agent(rng: np.random.Generator, in_dim: int, hidden: int, n_actions: int) -> Params:
    return {
        "agent.W1": _uniform(rng, in_dim, (in_dim, hidden)),
        "agent.b1": _uniform(rng, in_dim, (hidden,)),
        "agent.W2": _uniform(rng, hidden, (hidden, n_actions)),
        "agent.b2": _uniform(rng, hidden, (n_actions,)),
    }


def init_mixer(
    rng: np.random.Generator, kind: str, n_agents: int, state_dim: int, hidden: int
) -> Params:
    if kind == "vdn":
        return {}
    if kind != "qmix":
        raise ValueError(f"unknown mixer {kind!r}")
    return {
        "mix.hw1": _uniform(rng, state_dim, (state_dim, n_agents * hidden)),
        "mix.hb1": _uniform(rng, state_dim, (n_agents * hidden,)),
        "mix.bw1": _uniform(rng, state_dim, (state_dim, hidden)),
        "mix.bb1": _uniform(rng, state_dim, (hidden,)),
        "mix.hw2": _uniform(rng, state_dim, (state_dim, hidden)),
        "mix.hb2": _uniform(rng, state_dim, (hidden,)),
        "mix.v": _uniform(rng, state_dim, (state_dim,)),
        "mix.vb": _uniform(rng, state_dim, (1,)),
    }


# -- agent network: affine -> relu -> affine --------------------------------

def agent_forward(p: Params, x: np.ndarray):
    pre = x @ p["agent.W1"] + p["agent.b1"]
    h = np.maximum(pre, 0.0)
    q = h @ p["agent.W2"] + p["agent.b2"]
    return q, (x, pre, h)


def agent_backward(p: Params, cache, dq: np.ndarray) -> Params:
    x, pre, h = cache
    x2 = x.reshape(-1, x.shape[-1])
    h2 = h.reshape(-1, h.shape[-1])
    dq2 = dq.reshape(-1, dq.shape[-1])
    dh = dq2 @ p["agent.W2"].T
    dpre = dh * (pre.reshape(dh.shape) > 0)
    return {
        "agent.W1": x2.T @ dpre,
        "agent.b1": dpre.sum(axis=0),
        "agent.W2": h2.T @ dq2,
        "agent.b2": dq2.sum(axis=0),
    }


# -- mixer ------------------------------------------------------------------
#
# q_tot = elu(q . |W1(s)| + B1(s)) . |W2(s)| + V(s), with every hypernetwork a
# single affine map of the state. Absolute values keep dq_tot/dq_a >= 0.

def _elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def mixer_forward(p: Params, qa: np.ndarray, s: np.ndarray):
    """Mix chosen-action values ``qa`` (B, n) conditioned on states ``s`` (B, ds)."""
    if "mix.hw1" not in p:  # vdn: plain sum
        return qa.sum(axis=1), qa.shape[1]
    bsz, n = qa.shape
    w1 = s @ p["mix.hw1"] + p["mix.hb1"]
    a1 = np.abs(w1).reshape(bsz, n, -1)
    b1 = s @ p["mix.bw1"] + p["mix.bb1"]
    z = np.einsum("bn,bnm->bm", qa, a1) + b1
    hid = _elu(z)
    w2 = s @ p["mix.hw2"] + p["mix.hb2"]
    a2 = np.abs(w2)
    v = s @ p["mix.v"] + p["mix.vb"][0]
    q_tot = (hid * a2).sum(axis=1) + v
    return q_tot, (qa, s, w1, a1, z, hid, w2, a2)


def mixer_backward(p: Params, cache, dq_tot: np.ndarray):
    """Returns ``(param_grads, d_qa)``."""
    if isinstance(cache, int):  # vdn
        return {}, np.repeat(dq_tot[:, None], cache, axis=1)
    qa, s, w1, a1, z, hid, w2, a2 = cache
    g = dq_tot[:, None]
    dw2 = g * hid * np.sign(w2)
    dz = g * a2 * _elu_grad(z)
    dqa = np.einsum("bm,bnm->bn", dz, a1)
    dw1 = (qa[:, :, None] * dz[:, None, :]).reshape(w1.shape) * np.sign(w1)
    return {
        "mix.hw1": s.T @ dw1,
        "mix.hb1": dw1.sum(axis=0),
        "mix.bw1": s.T @ dz,
        "mix.bb1": dz.sum(axis=0),
        "mix.hw2": s.T @ dw2,
        "mix.hb2": dw2.sum(axis=0),
        "mix.v": s.T @ dq_tot,
        "mix.vb": np.array([dq_tot.sum()]),
    }, dqa
