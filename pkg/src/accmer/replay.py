"""Fixed-capacity transition ring buffer and its co-indexed weight lookup table.

Transitions live in dense, preallocated arrays indexed by slot, and the
per-slot prioritization weights sit in a flat array with the same indexing.
Keeping storage contiguous is what lets a reused slot translate into reused
cache lines.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

INITIAL_WEIGHT = 1.0


@dataclass
class Transition:
    state: np.ndarray
    obs: np.ndarray  # (n_agents, obs_dim)
    actions: np.ndarray  # (n_agents,)
    reward: float
    next_state: np.ndarray
    next_obs: np.ndarray
    done: bool  # true terminal (all prey captured); time-limit cut-offs are not terminal
    step: int = 0


class ReplayBuffer:
    """Ring store of transitions with oldest-first overwrite.

    Occupied slots are always the prefix ``[0, fill_count)``.
    """

    def __init__(self, capacity: int, n_agents: int, obs_dim: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.state_dim = state_dim
        self.obs = np.zeros((capacity, n_agents, obs_dim), dtype=np.uint8)
        self.next_obs = np.zeros((capacity, n_agents, obs_dim), dtype=np.uint8)
        self.state = np.zeros((capacity, state_dim), dtype=np.float64)
        self.next_state = np.zeros((capacity, state_dim), dtype=np.float64)
        self.actions = np.zeros((capacity, n_agents), dtype=np.uint8)
        self.reward = np.zeros(capacity, dtype=np.float64)
        self.done = np.zeros(capacity, dtype=np.uint8)
        self.step = np.zeros(capacity, dtype=np.int64)
        self.write_cursor = 0
        self.fill_count = 0

    def __len__(self) -> int:
        return self.fill_count

    @property
    def transition_bytes(self) -> int:
        """Bytes one slot occupies across all per-slot arrays."""
        return sum(a[0].nbytes for a in (
            self.obs, self.next_obs, self.state, self.next_state,
            self.actions, self.reward, self.done, self.step,
        ))

    def write(self, t: Transition) -> int:
        if len(t.actions) != self.n_agents:
            raise ValueError(
                f"joint action has {len(t.actions)} entries, expected {self.n_agents}"
            )
        if not np.isfinite(t.reward):
            raise ValueError("reward must be finite")
        i = self.write_cursor
        self.obs[i] = t.obs
        self.next_obs[i] = t.next_obs
        self.state[i] = t.state
        self.next_state[i] = t.next_state
        self.actions[i] = t.actions
        self.reward[i] = t.reward
        self.done[i] = bool(t.done)
        self.step[i] = t.step
        self.write_cursor = (i + 1) % self.capacity
        self.fill_count = min(self.fill_count + 1, self.capacity)
        return i

    def get(self, slot: int) -> Transition:
        if not 0 <= slot < self.fill_count:
            raise IndexError(f"slot {slot} not occupied")
        return Transition(
            state=self.state[slot].copy(), obs=self.obs[slot].copy(),
            actions=self.actions[slot].copy(), reward=float(self.reward[slot]),
            next_state=self.next_state[slot].copy(), next_obs=self.next_obs[slot].copy(),
            done=bool(self.done[slot]), step=int(self.step[slot]),
        )


class WeightTable:
    """Per-slot non-negative weights plus an overwrite generation counter."""

    def __init__(self, capacity: int, initial: float = INITIAL_WEIGHT):
        self.capacity = capacity
        self.initial = float(initial)
        self.weights = np.full(capacity, self.initial, dtype=np.float64)
        self.generation = np.zeros(capacity, dtype=np.uint64)
        self.size = 0  # occupied prefix length, mirrors ReplayBuffer.fill_count

    def max_weight(self) -> float:
        if self.size == 0:
            return self.initial
        return float(self.weights[: self.size].max())

    def on_insert(self, slot: int) -> None:
        # New data enters at the current maximum so prioritized selection can reach it.
        w = self.max_weight()
        self.weights[slot] = w
        self.generation[slot] += 1
        self.size = max(self.size, slot + 1)


def push(buffer: ReplayBuffer, table: WeightTable, t: Transition) -> int:
    """Store ``t`` at the write cursor and reset that slot's weight to the table maximum."""
    slot = buffer.write(t)
    table.on_insert(slot)
    return slot


def update_weights(table: WeightTable, indices, new_weights) -> None:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    w = np.asarray(new_weights, dtype=np.float64).ravel()
    if idx.shape != w.shape:
        raise ValueError(f"{idx.size} indices but {w.size} weights")
    if idx.size == 0:
        return
    if idx.min() < 0 or idx.max() >= table.size:
        raise IndexError("weight update touches an unoccupied or out-of-range slot")
    if not np.all(np.isfinite(w)) or w.min() < 0:
        raise ValueError("weights must be finite and non-negative")
    table.weights[idx] = w


def apply_decay(table: WeightTable, gamma_w: float) -> None:
    if not 0.0 < gamma_w <= 1.0:
        raise ValueError(f"gamma_w out of (0,1]: {gamma_w}")
    if gamma_w != 1.0:
        table.weights[: table.size] *= gamma_w


def top_k(table: WeightTable, k: int) -> np.ndarray:
    """The ``k`` occupied slots with the largest weight, descending.

    Equal weights are ordered by lower slot index first.
    """
    if k < 0 or k > table.size:
        raise ValueError(f"k={k} exceeds occupied slots ({table.size})")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    w = table.weights[: table.size]
    kth = -np.partition(-w, k - 1)[k - 1]
    above = np.flatnonzero(w > kth)
    at = np.flatnonzero(w == kth)[: k - above.size]
    sel = np.concatenate([above, at])
    return sel[np.lexsort((sel, -w[sel]))]


# --------------------------------------------------------------------------
# Binary checkpoint
#
#   header  : magic b"ACCMERB\0", then little-endian
#             <u4 version, <u8 capacity, <u8 fill_count, <u8 write_cursor,
#             <u4 n_agents, <u4 obs_dim, <u4 state_dim, <u4 table_size,
#             <f8 initial_weight
#   payload : arrays in _CKPT_ARRAYS order, each full capacity, C order,
#             little-endian with the listed dtype
# --------------------------------------------------------------------------

BUFFER_MAGIC = b"ACCMERB\0"
BUFFER_VERSION = 1
_HEADER = struct.Struct("<8sIQQQIIIId")
_CKPT_ARRAYS = (
    ("obs", "<u1"), ("next_obs", "<u1"), ("state", "<f8"), ("next_state", "<f8"),
    ("actions", "<u1"), ("reward", "<f8"), ("done", "<u1"), ("step", "<i8"),
)


def save_checkpoint(path: str | Path, buffer: ReplayBuffer, table: WeightTable) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(
            BUFFER_MAGIC, BUFFER_VERSION, buffer.capacity, buffer.fill_count,
            buffer.write_cursor, buffer.n_agents, buffer.obs_dim, buffer.state_dim,
            table.size, table.initial,
        ))
        for name, dtype in _CKPT_ARRAYS:
            fh.write(getattr(buffer, name).astype(dtype, copy=False).tobytes())
        fh.write(table.weights.astype("<f8", copy=False).tobytes())
        fh.write(table.generation.astype("<u8", copy=False).tobytes())


def load_checkpoint(path: str | Path) -> tuple[ReplayBuffer, WeightTable]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated buffer checkpoint")
    (magic, version, capacity, fill, cursor, n_agents, obs_dim, state_dim,
     size, initial) = _HEADER.unpack_from(data)
    if magic != BUFFER_MAGIC:
        raise ValueError("not a replay-buffer checkpoint")
    if version != BUFFER_VERSION:
        raise ValueError(f"unsupported buffer checkpoint version {version}")
    buf = ReplayBuffer(capacity, n_agents, obs_dim, state_dim)
    table = WeightTable(capacity, initial)
    offset = _HEADER.size
    for name, dtype in _CKPT_ARRAYS + (("weights", "<f8"), ("generation", "<u8")):
        target = getattr(table if name in ("weights", "generation") else buf, name)
        nbytes = target.size * np.dtype(dtype).itemsize
        if offset + nbytes > len(data):
            raise ValueError("truncated buffer checkpoint")
        arr = np.frombuffer(data, dtype=dtype, count=target.size, offset=offset)
        target[...] = arr.reshape(target.shape)
        offset += nbytes
    if offset != len(data):
        raise ValueError("trailing bytes in buffer checkpoint")
    buf.fill_count, buf.write_cursor = fill, cursor
    table.size = size
    return buf, table
