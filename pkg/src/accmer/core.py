"""Run configuration, config-file parsing and deterministic RNG streams."""
from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

SAMPLER_MODES = ("uniform", "prioritized", "accmer")
MIXER_KINDS = ("qmix", "vdn")


class ConfigError(ValueError):
    """Raised for invalid run configuration; ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class RunConfig:
    # environment
    n_agents: int = 8
    grid_size: int = 10
    n_prey: int = 8
    punishment: float = 0.0
    episode_limit: int = 200
    obs_radius: int = 2
    # replay / sampler
    buffer_capacity: int = 100_000
    batch_size: int = 256
    reuse_ratio: float = 0.5
    weight_decay: float = 1.0
    sampler_mode: str = "accmer"
    weight_clip: float = 0.0  # 0 disables clipping
    # learner
    env_discount: float = 0.99
    learning_rate: float = 0.001
    agent_hidden: int = 64
    mixer_hidden: int = 32
    mixer: str = "qmix"
    target_sync_episodes: int = 200
    grad_clip: float = 10.0  # global gradient-norm cap; 0 disables
    double_q: bool = False
    # exploration
    epsilon_start: float = 0.995
    epsilon_end: float = 0.05
    epsilon_anneal_steps: int = 100_000
    eval_epsilon: float = 0.0
    # run
    total_steps: int = 1_000_000
    eval_interval: int = 1000
    eval_episodes: int = 32
    record_timing: bool = False
    seed: int = 0

    @property
    def reuse_size(self) -> int:
        """Number of reused slots per batch, floor(alpha * b)."""
        return int(np.floor(self.reuse_ratio * self.batch_size + 1e-9))

    @property
    def reuse_window(self) -> int:
        """Batches per reuse window, floor(d / b)."""
        return self.buffer_capacity // self.batch_size

    def replace(self, **changes: Any) -> "RunConfig":
        return validate_config({**self.to_dict(), **changes})

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


# Tables II / III defaults and the scalability setting. Weight decay follows the
# per-task values used with each table (1.0 without punishment, 0.8 with).
PRESETS: dict[str, dict[str, Any]] = {
    "pp0": dict(
        punishment=0.0, batch_size=256, buffer_capacity=100_000,
        learning_rate=0.001, target_sync_episodes=200, reuse_ratio=0.5,
        weight_decay=1.0,
    ),
    "pp15": dict(
        punishment=-1.5, batch_size=128, buffer_capacity=10_000,
        learning_rate=0.001, target_sync_episodes=200, reuse_ratio=0.5,
        weight_decay=0.8,
    ),
    "pp-scale": dict(
        punishment=0.0, batch_size=128, buffer_capacity=10_000,
        learning_rate=0.001, target_sync_episodes=200, reuse_ratio=0.5,
        weight_decay=0.8,
    ),
    # desk-scale learning check: 4 predators, 4 prey, 7x7, 150k steps
    "smoke": dict(
        n_agents=4, n_prey=4, grid_size=7, punishment=0.0, total_steps=150_000,
        batch_size=128, buffer_capacity=50_000, reuse_ratio=0.5, weight_decay=1.0,
        learning_rate=1e-4, target_sync_episodes=10, grad_clip=10.0, double_q=True,
        seed=1,
    ),
}

# Short names accepted on input; always serialized under the canonical field name.
ALIASES = {
    "buffer": "buffer_capacity",
    "d": "buffer_capacity",
    "b": "batch_size",
    "lr": "learning_rate",
    "alpha": "reuse_ratio",
    "mode": "sampler_mode",
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value: Any) -> Any:
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            if isinstance(value, bool):
                raise ValueError
            if isinstance(value, str):
                value = value.strip().replace("_", "")
                try:
                    return int(value)
                except ValueError:
                    value = float(value)  # accept "1e5"
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError
            return bool(value)
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot parse {value!r} as {kind}", name) from None


def _check(cond: bool, field: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{field}: {message}", field)


def validate_config(raw: Mapping[str, Any]) -> RunConfig:
    """Build a fully-populated :class:`RunConfig` from a key-value map.

    Missing keys take their defaults. Unknown keys and out-of-range values raise
    :class:`ConfigError`.
    """
    values: dict[str, Any] = {}
    for key, value in raw.items():
        name = ALIASES.get(key, key)
        if name not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}", key)
        values[name] = _coerce(name, value)
    cfg = RunConfig(**values)

    _check(cfg.n_agents >= 2, "n_agents", "need at least 2 agents")
    _check(cfg.grid_size >= 1, "grid_size", "must be positive")
    _check(cfg.n_prey >= 1, "n_prey", "must be positive")
    _check(cfg.punishment <= 0, "punishment", "must be <= 0")
    _check(cfg.episode_limit >= 1, "episode_limit", "must be positive")
    _check(cfg.obs_radius >= 0, "obs_radius", "must be >= 0")
    _check(cfg.buffer_capacity >= 1, "buffer_capacity", "must be positive")
    _check(cfg.batch_size >= 1, "batch_size", "must be positive")
    _check(cfg.batch_size <= cfg.buffer_capacity, "batch_size",
           f"b > d ({cfg.batch_size} > {cfg.buffer_capacity})")
    _check(0.0 <= cfg.reuse_ratio <= 1.0, "reuse_ratio",
           f"alpha out of [0,1]: {cfg.reuse_ratio}")
    _check(0.0 < cfg.weight_decay <= 1.0, "weight_decay",
           f"gamma_w out of (0,1]: {cfg.weight_decay}")
    _check(cfg.sampler_mode in SAMPLER_MODES, "sampler_mode",
           f"must be one of {SAMPLER_MODES}")
    _check(cfg.weight_clip >= 0, "weight_clip", "must be >= 0")
    _check(0.0 <= cfg.env_discount < 1.0, "env_discount",
           f"gamma_env out of [0,1): {cfg.env_discount}")
    _check(cfg.learning_rate > 0, "learning_rate", "must be positive")
    _check(cfg.agent_hidden >= 1, "agent_hidden", "must be positive")
    _check(cfg.mixer_hidden >= 1, "mixer_hidden", "must be positive")
    _check(cfg.mixer in MIXER_KINDS, "mixer", f"must be one of {MIXER_KINDS}")
    _check(cfg.grad_clip >= 0, "grad_clip", "must be >= 0")
    _check(cfg.target_sync_episodes >= 1, "target_sync_episodes", "must be positive")
    for name in ("epsilon_start", "epsilon_end", "eval_epsilon"):
        _check(0.0 <= getattr(cfg, name) <= 1.0, name, "out of [0,1]")
    _check(cfg.epsilon_anneal_steps >= 0, "epsilon_anneal_steps", "must be >= 0")
    _check(cfg.total_steps >= 0, "total_steps", "must be >= 0")
    _check(cfg.eval_interval >= 1, "eval_interval", "must be positive")
    _check(cfg.eval_episodes >= 0, "eval_episodes", "must be >= 0")
    _check(0 <= cfg.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    """Flat ``key = value`` text, one field per line, in declaration order."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines. ``#`` starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split(sep, 1))
        raw[key] = value
    return raw


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    preset: str | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    """Resolve preset < config file < explicit overrides < ``ACCMER_SEED``."""
    raw: dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}", "preset")
        raw.update(PRESETS[preset])
    if path is not None:
        raw.update(parse_config_text(Path(path).read_text()))
    if overrides:
        raw.update({ALIASES.get(k, k): v for k, v in overrides.items()})
    environ = os.environ if environ is None else environ
    if environ.get("ACCMER_SEED"):
        raw["seed"] = environ["ACCMER_SEED"]
    return validate_config(raw)


# --------------------------------------------------------------------------
# RNG streams
# --------------------------------------------------------------------------

def stream_key(name: str) -> int:
    """64-bit key of a stream name: first 8 bytes (little-endian) of BLAKE2b(name)."""
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


def rng_stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for one consumer.

    The stream is ``PCG64(SeedSequence(seed, spawn_key=(stream_key(name), *extra)))``,
    so adding a new named consumer never shifts the draws of an existing one.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(stream_key(name), *extra))
    return np.random.Generator(np.random.PCG64(ss))


class RngStreams:
    """Named substreams derived from one run seed (env, sampler, init, explore, eval)."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = rng_stream(self.seed, name)
        return self._streams[name]

    def fresh(self, name: str, *extra: int) -> np.random.Generator:
        """A new, uncached generator, e.g. one per evaluation round."""
        return rng_stream(self.seed, name, *extra)
