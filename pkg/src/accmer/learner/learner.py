"""Value-decomposition Q-learner trained with the prioritization-weighted TD loss."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import prioritization as prio
from ..core import RunConfig
from ..replay import ReplayBuffer
from . import nets
from .nets import Params
from .optim import Adam, clip_grad_norm


def epsilon_at(step: int, start: float, end: float, anneal_steps: int) -> float:
    """Linear annealing from ``start`` to ``end`` over ``anneal_steps`` steps."""
    if anneal_steps <= 0 or step >= anneal_steps:
        return end
    return start + (end - start) * max(step, 0) / anneal_steps


@dataclass
class Batch:
    """Learner view of a set of transitions; observations as float agent inputs."""

    state: np.ndarray  # (B, ds)
    inputs: np.ndarray  # (B, n, obs_dim + n)
    actions: np.ndarray  # (B, n) int
    reward: np.ndarray  # (B,)
    next_state: np.ndarray
    next_inputs: np.ndarray
    done: np.ndarray  # (B,) float 0/1


@dataclass
class UpdateStats:
    loss: float
    raw_weights: np.ndarray
    q_tot: np.ndarray
    targets: np.ndarray
    applied: bool


class Learner:
    """Shared-parameter agent network, mixer, target copies and optimizer."""

    def __init__(self, n_agents: int, obs_dim: int, state_dim: int, n_actions: int = 6,
                 agent_hidden: int = 64, mixer_hidden: int = 32, mixer: str = "qmix",
                 lr: float = 1e-3, rng: np.random.Generator | None = None,
                 grad_clip: float = 0.0, double_q: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_agents, self.obs_dim, self.state_dim = n_agents, obs_dim, state_dim
        self.n_actions = n_actions
        self.in_dim = obs_dim + n_agents
        self.mixer_kind = mixer
        self.grad_clip, self.double_q = grad_clip, double_q
        self.params: Params = nets.init_agent(rng, self.in_dim, agent_hidden, n_actions)
        self.params.update(nets.init_mixer(rng, mixer, n_agents, state_dim, mixer_hidden))
        self.target: Params = {k: v.copy() for k, v in self.params.items()}
        self.optim = Adam(self.params, lr=lr)
        self._agent_ids = np.eye(n_agents)

    @classmethod
    def from_config(cls, config: RunConfig, obs_dim: int, state_dim: int,
                    rng: np.random.Generator) -> "Learner":
        return cls(config.n_agents, obs_dim, state_dim, 6, config.agent_hidden,
                   config.mixer_hidden, config.mixer, config.learning_rate, rng,
                   config.grad_clip, config.double_q)

    # -- inputs ---------------------------------------------------------------

    def agent_inputs(self, obs: np.ndarray) -> np.ndarray:
        """Append the one-hot agent id to observations of shape (..., n, obs_dim)."""
        obs = np.asarray(obs, dtype=np.float64)
        ids = np.broadcast_to(self._agent_ids, obs.shape[:-1] + (self.n_agents,))
        return np.concatenate([obs, ids], axis=-1)

    def batch_from_buffer(self, buffer: ReplayBuffer, indices: np.ndarray) -> Batch:
        return Batch(
            state=buffer.state[indices],
            inputs=self.agent_inputs(buffer.obs[indices]),
            actions=buffer.actions[indices].astype(np.int64),
            reward=buffer.reward[indices],
            next_state=buffer.next_state[indices],
            next_inputs=self.agent_inputs(buffer.next_obs[indices]),
            done=buffer.done[indices].astype(np.float64),
        )

    # -- acting ---------------------------------------------------------------

    def forward_agent(self, inputs: np.ndarray, params: Params | None = None) -> np.ndarray:
        p = self.params if params is None else params
        if inputs.shape[-1] != self.in_dim:
            raise ValueError(f"agent input length {inputs.shape[-1]} != {self.in_dim}")
        return nets.agent_forward(p, inputs)[0]

    def select_actions(self, obs: np.ndarray, epsilon: float,
                       rng: np.random.Generator) -> np.ndarray:
        """Epsilon-greedy joint action for observations (n, obs_dim) or (E, n, obs_dim)."""
        q = self.forward_agent(self.agent_inputs(obs))
        greedy = prio.greedy_actions(q)
        explore = rng.random(greedy.shape) < epsilon
        random_actions = rng.integers(0, self.n_actions, size=greedy.shape)
        return np.where(explore, random_actions, greedy)

    # -- values ---------------------------------------------------------------

    def q_tot(self, state: np.ndarray, inputs: np.ndarray, actions: np.ndarray,
              params: Params | None = None) -> np.ndarray:
        p = self.params if params is None else params
        q = nets.agent_forward(p, inputs)[0]
        qa = np.take_along_axis(q, actions[..., None], axis=-1)[..., 0]
        return nets.mixer_forward(p, qa, state)[0]

    def greedy_q_tot(self, state: np.ndarray, inputs: np.ndarray,
                     params: Params | None = None,
                     online_q: np.ndarray | None = None) -> np.ndarray:
        """Mixed value of the per-agent greedy joint action (IGM maximiser).

        With ``double_q`` the greedy actions come from the online network
        (``online_q`` if already computed) and are evaluated under ``params``.
        """
        p = self.target if params is None else params
        q = nets.agent_forward(p, inputs)[0]
        if self.double_q and p is not self.params:
            if online_q is None:
                online_q = nets.agent_forward(self.params, inputs)[0]
            pick = online_q.argmax(axis=-1)
            qa = np.take_along_axis(q, pick[..., None], axis=-1)[..., 0]
        else:
            qa = q.max(axis=-1)
        return nets.mixer_forward(p, qa, state)[0]

    def td_target(self, batch: Batch, gamma: float) -> np.ndarray:
        """``r + gamma * Q_tot^target(s', greedy u')``, with no bootstrap on terminal."""
        bootstrap = self.greedy_q_tot(batch.next_state, batch.next_inputs, self.target)
        return batch.reward + gamma * (1.0 - batch.done) * bootstrap

    def q_star_proxy(self, batch: Batch) -> np.ndarray:
        """Optimal-value estimate: the target network's greedy mixed value at ``s``."""
        return self.greedy_q_tot(batch.state, batch.inputs, self.target)

    # -- loss -----------------------------------------------------------------

    def _forward(self, p: Params, batch: Batch):
        q, agent_cache = nets.agent_forward(p, batch.inputs)
        qa = np.take_along_axis(q, batch.actions[..., None], axis=-1)[..., 0]
        q_tot, mix_cache = nets.mixer_forward(p, qa, batch.state)
        return q, q_tot, (agent_cache, mix_cache)

    def _loss_and_grads(self, p: Params, batch: Batch, q, q_tot, caches, targets, weights):
        err = q_tot - targets
        loss = float(np.sum(weights * err * err))
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss")
        agent_cache, mix_cache = caches
        grads, dqa = nets.mixer_backward(p, mix_cache, 2.0 * weights * err)
        dq = np.zeros_like(q)
        np.put_along_axis(dq, batch.actions[..., None], dqa[..., None], axis=-1)
        grads.update(nets.agent_backward(p, agent_cache, dq))
        return loss, grads

    def weighted_loss(self, batch: Batch, targets: np.ndarray, weights: np.ndarray,
                      params: Params | None = None):
        """``sum_i w_i (Q_tot_i - y_i)^2`` and its gradient w.r.t. every parameter.

        Targets are treated as constants. Returns ``(loss, grads)``.
        """
        p = self.params if params is None else params
        q, q_tot, caches = self._forward(p, batch)
        return self._loss_and_grads(p, batch, q, q_tot, caches,
                                    np.asarray(targets, dtype=np.float64),
                                    np.asarray(weights, dtype=np.float64))

    def target_values(self, batch: Batch, gamma: float,
                      online_q: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """TD targets and Q* proxies from one stacked target-network pass.

        ``online_q`` is the online agent output on ``batch.inputs``, reused
        for double-Q action selection when given.
        """
        bsz = batch.reward.shape[0]
        stacked_online = None
        if self.double_q:
            if online_q is None:
                online_q = nets.agent_forward(self.params, batch.inputs)[0]
            stacked_online = np.concatenate(
                [nets.agent_forward(self.params, batch.next_inputs)[0], online_q])
        greedy = self.greedy_q_tot(
            np.concatenate([batch.next_state, batch.state]),
            np.concatenate([batch.next_inputs, batch.inputs]),
            self.target,
            stacked_online,
        )
        targets = batch.reward + gamma * (1.0 - batch.done) * greedy[:bsz]
        return targets, greedy[bsz:]

    def update(self, batch: Batch, gamma: float, epsilon: float,
               weight_clip: float = 0.0) -> UpdateStats:
        """One learning step: optimal weights, weighted loss, optimizer step.

        Weights are computed from the same pre-update forward pass the loss uses.
        """
        q, q_tot, caches = self._forward(self.params, batch)
        targets, q_star = self.target_values(batch, gamma, q)
        probs = prio.policy_prob_batch(q, batch.actions, epsilon)
        raw = prio.optimal_weight_batch(q_tot, targets, q_star, probs)
        if weight_clip > 0:
            raw = np.minimum(raw, weight_clip)
        loss, grads = self._loss_and_grads(
            self.params, batch, q, q_tot, caches, targets, prio.normalize_batch(raw))
        clip_grad_norm(grads, self.grad_clip)
        applied = self.optim.step(self.params, grads)
        return UpdateStats(loss, raw, q_tot, targets, applied)

    def sync_targets(self) -> None:
        self.target = {k: v.copy() for k, v in self.params.items()}


# --------------------------------------------------------------------------
# Parameter checkpoint
#
#   magic b"ACCMERP\0", <u4 version, <u4 json_len, JSON header (utf-8), then
#   each array listed in header["arrays"] as little-endian float64, C order.
# --------------------------------------------------------------------------

PARAM_MAGIC = b"ACCMERP\0"
PARAM_VERSION = 1
_PHEAD = struct.Struct("<8sII")


def save_params(path: str | Path, learner: Learner, config: RunConfig | None = None,
                extra: dict | None = None) -> None:
    arrays = {f"online.{k}": v for k, v in learner.params.items()}
    arrays.update({f"target.{k}": v for k, v in learner.target.items()})
    header = {
        "n_agents": learner.n_agents, "obs_dim": learner.obs_dim,
        "state_dim": learner.state_dim, "n_actions": learner.n_actions,
        "mixer": learner.mixer_kind,
        "config": config.to_dict() if config is not None else None,
        "arrays": [[k, list(v.shape)] for k, v in arrays.items()],
        **(extra or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PHEAD.pack(PARAM_MAGIC, PARAM_VERSION, len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_params(path: str | Path) -> tuple[Learner, dict]:
    """Rebuild a :class:`Learner` from a checkpoint; ``ValueError`` if corrupt."""
    data = Path(path).read_bytes()
    try:
        magic, version, hlen = _PHEAD.unpack_from(data)
        if magic != PARAM_MAGIC:
            raise ValueError("not a parameter checkpoint")
        if version != PARAM_VERSION:
            raise ValueError(f"unsupported parameter checkpoint version {version}")
        header = json.loads(data[_PHEAD.size:_PHEAD.size + hlen])
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"corrupt parameter checkpoint: {exc}") from None
    learner = Learner(header["n_agents"], header["obs_dim"], header["state_dim"],
                      header["n_actions"], mixer=header["mixer"])
    offset = _PHEAD.size + hlen
    online, target = {}, {}
    for key, shape in header["arrays"]:
        count = int(np.prod(shape))
        if offset + 8 * count > len(data):
            raise ValueError("corrupt parameter checkpoint: truncated")
        arr = np.frombuffer(data, "<f8", count, offset).reshape(shape).astype(np.float64)
        offset += 8 * count
        where, name = key.split(".", 1)
        (online if where == "online" else target)[name] = arr
    if offset != len(data):
        raise ValueError("corrupt parameter checkpoint: trailing bytes")
    learner.params, learner.target = online, target
    learner.optim = Adam(learner.params)
    return learner, header
