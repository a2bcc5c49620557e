"""Training driver: act, store, sample, reweight, update, evaluate."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from ..core import RngStreams, RunConfig
from ..env import PredatorPrey
from ..replay import (ReplayBuffer, Transition, WeightTable, apply_decay, push,
                      save_checkpoint, update_weights)
from ..sampler import AccessTrace, Sampler, TraceRecorder, write_trace
from .learner import Learner, epsilon_at, save_params

log = logging.getLogger(__name__)

CURVES_VERSION = "accmer-curves v1"
CURVE_COLUMNS = (
    "train_step", "episode", "eval_mean_reward", "loss", "epsilon",
    "wall_ms_per_step", "distinct_slots_touched",
)


@dataclass
class RunResult:
    config: RunConfig
    curves: list[dict] = field(default_factory=list)
    trace: AccessTrace = field(default_factory=AccessTrace)
    learner: Learner | None = None
    buffer: ReplayBuffer | None = None
    table: WeightTable | None = None
    episodes: int = 0
    updates: int = 0
    sample_seconds: float = 0.0
    wall_seconds: float = 0.0

    @property
    def mean_sample_ms(self) -> float:
        return 1000.0 * self.sample_seconds / self.updates if self.updates else float("nan")

    @property
    def eval_rewards(self) -> np.ndarray:
        return np.array([row["eval_mean_reward"] for row in self.curves])


def evaluate(learner: Learner, env: PredatorPrey, n_episodes: int,
             rng: np.random.Generator, epsilon: float = 0.0) -> np.ndarray:
    """Returns of ``n_episodes`` episodes run in lockstep with batched action selection."""
    states, obs = [], []
    for _ in range(n_episodes):
        s, o = env.reset(rng)
        states.append(s)
        obs.append(o)
    returns = np.zeros(n_episodes)
    active = list(range(n_episodes))
    while active:
        actions = learner.select_actions(np.stack([obs[i] for i in active]), epsilon, rng)
        still = []
        for row, i in enumerate(active):
            states[i], obs[i], r, done, _ = env.step(states[i], actions[row], rng)
            returns[i] += r
            if not done:
                still.append(i)
        active = still
    return returns


def mann_kendall(values) -> tuple[float, float, float]:
    """Mann-Kendall trend test with tie correction.

    Returns ``(S, z, p)`` where ``p`` is two-sided (normal approximation).
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    if n < 3:
        return 0.0, 0.0, 1.0
    diff = np.sign(x[None, :] - x[:, None])
    s = float(np.triu(diff, 1).sum())
    _, counts = np.unique(x, return_counts=True)
    var = (n * (n - 1) * (2 * n + 5) - np.sum(counts * (counts - 1) * (2 * counts + 5))) / 18.0
    if var <= 0:
        return s, 0.0, 1.0
    z = (s - np.sign(s)) / math.sqrt(var) if s != 0 else 0.0
    return s, z, float(2.0 * stats.norm.sf(abs(z)))


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_curves(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {CURVES_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in CURVE_COLUMNS])


def read_curves(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# {CURVES_VERSION}":
            raise ValueError(f"unexpected curves header {first!r}")
        out = []
        for row in csv.DictReader(fh):
            out.append({
                k: (float(v) if v != "" else float("nan")) if k not in ("train_step", "episode")
                else int(v) for k, v in row.items()
            })
        return out


def train_run(config: RunConfig, out_dir: str | Path | None = None,
              progress: Callable[[dict], None] | None = None) -> RunResult:
    """Run the full act / store / sample / reweight / update loop for ``total_steps``.

    With ``out_dir`` set, writes ``curves.csv``, ``trace.bin``, ``timing.json``,
    ``checkpoints/params_final.bin`` and ``checkpoints/buffer_final.bin``.
    """
    streams = RngStreams(config.seed)
    env = PredatorPrey(config)
    learner = Learner.from_config(config, env.obs_dim, env.state_dim, streams["learner-init"])
    buffer = ReplayBuffer(config.buffer_capacity, config.n_agents, env.obs_dim, env.state_dim)
    table = WeightTable(config.buffer_capacity)
    sampler = Sampler.from_config(config)
    recorder = TraceRecorder(window=sampler.window)
    result = RunResult(config=config, learner=learner, buffer=buffer, table=table)

    env_rng, sample_rng, explore_rng = streams["env"], streams["sampler"], streams["explore"]
    state, obs = env.reset(env_rng)
    state_vec = env.state_vector(state)

    losses: list[float] = []
    window_slots: set[int] = set()
    window_counts: list[int] = []
    step_seconds = 0.0
    started = time.perf_counter()

    for t in range(1, config.total_steps + 1):
        tick = time.perf_counter()
        eps = epsilon_at(t - 1, config.epsilon_start, config.epsilon_end,
                         config.epsilon_anneal_steps)
        actions = learner.select_actions(obs, eps, explore_rng)
        next_state, next_obs, reward, done, _ = env.step(state, actions, env_rng)
        if not math.isfinite(reward):
            raise FloatingPointError(f"non-finite reward at step {t}")
        next_vec = env.state_vector(next_state)
        push(buffer, table, Transition(
            state_vec, obs, actions, reward, next_vec, next_obs,
            done=next_state.n_alive == 0, step=t,
        ))
        if done:
            result.episodes += 1
            if result.episodes % config.target_sync_episodes == 0:
                learner.sync_targets()
            state, obs = env.reset(env_rng)
            state_vec = env.state_vector(state)
        else:
            state, obs, state_vec = next_state, next_obs, next_vec

        if buffer.fill_count >= config.batch_size:
            s0 = time.perf_counter()
            batch = sampler.next_batch(sample_rng, table)
            result.sample_seconds += time.perf_counter() - s0
            recorder.record(batch)
            idx = batch.indices
            stats_ = learner.update(learner.batch_from_buffer(buffer, idx),
                                    config.env_discount, eps, config.weight_clip)
            if not math.isfinite(stats_.loss):
                raise FloatingPointError(f"non-finite loss at step {t}")
            update_weights(table, idx, stats_.raw_weights)
            apply_decay(table, config.weight_decay)
            losses.append(stats_.loss)
            result.updates += 1
            window_slots.update(idx.tolist())
            if (batch.batch_number + 1) % sampler.window == 0:
                window_counts.append(len(window_slots))
                window_slots = set()
        step_seconds += time.perf_counter() - tick

        if t % config.eval_interval == 0:
            eval_rng = streams.fresh("eval", t // config.eval_interval)
            returns = (evaluate(learner, env, config.eval_episodes, eval_rng, config.eval_epsilon)
                       if config.eval_episodes else np.array([np.nan]))
            row = {
                "train_step": t,
                "episode": result.episodes,
                "eval_mean_reward": float(np.mean(returns)),
                "loss": float(np.mean(losses)) if losses else float("nan"),
                "epsilon": eps,
                "wall_ms_per_step": (1000.0 * step_seconds / config.eval_interval
                                     if config.record_timing else None),
                "distinct_slots_touched": (float(np.mean(window_counts))
                                           if window_counts else float("nan")),
            }
            if not math.isfinite(row["eval_mean_reward"]) and config.eval_episodes:
                raise FloatingPointError(f"non-finite evaluation reward at step {t}")
            result.curves.append(row)
            losses, window_counts, step_seconds = [], [], 0.0
            if progress is not None:
                progress(row)

    result.wall_seconds = time.perf_counter() - started
    result.trace = recorder.trace()

    if out_dir is not None:
        out = Path(out_dir)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        write_curves(out / "curves.csv", result.curves)
        write_trace(out / "trace.bin", result.trace)
        save_params(out / "checkpoints" / "params_final.bin", learner, config)
        save_checkpoint(out / "checkpoints" / "buffer_final.bin", buffer, table)
        (out / "timing.json").write_text(json.dumps({
            "wall_seconds": result.wall_seconds,
            "updates": result.updates,
            "mean_sample_ms": result.mean_sample_ms,
        }, indent=2))
    return result
