"""Partially observable grid-world Predator-Prey.

Predators share one team reward. A prey is captured when two or more adjacent
predators choose ``CATCH`` on the same step; a lone catcher earns the
(non-positive) ``punishment`` instead. Prey wander uniformly at random.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import RunConfig

Coord = tuple[int, int]

# Actions
UP, DOWN, LEFT, RIGHT, STAY, CATCH = range(6)
N_ACTIONS = 6
ACTION_NAMES = ("up", "down", "left", "right", "stay", "catch")
MOVES: dict[int, Coord] = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
NEIGHBOURS: tuple[Coord, ...] = ((-1, 0), (1, 0), (0, -1), (0, 1))

# Observation channels
WALL, PREDATOR, PREY = range(3)
N_CHANNELS = 3


@dataclass(frozen=True)
class EnvState:
    grid_size: int
    predator_positions: tuple[Coord, ...]
    prey_positions: tuple[Coord, ...]
    prey_alive: tuple[bool, ...]
    step_count: int = 0

    @property
    def n_alive(self) -> int:
        return sum(self.prey_alive)


class StepInfo(NamedTuple):
    captures: int
    solo_catches: int


class PredatorPrey:
    """Environment dynamics for one :class:`RunConfig`.

    The object holds no episode state; ``reset`` and ``step`` take and return
    immutable :class:`EnvState` values.
    """

    def __init__(self, config: RunConfig):
        self.n_agents = config.n_agents
        self.n_prey = config.n_prey
        self.grid_size = config.grid_size
        self.punishment = float(config.punishment)
        self.episode_limit = config.episode_limit
        self.radius = config.obs_radius
        self.window = 2 * self.radius + 1
        self.obs_dim = N_CHANNELS * self.window * self.window
        self.state_dim = 2 * self.n_agents + 3 * self.n_prey
        self.n_actions = N_ACTIONS

    # -- dynamics ----------------------------------------------------------

    def reset(self, rng: np.random.Generator) -> tuple[EnvState, np.ndarray]:
        n_cells = self.grid_size * self.grid_size
        n_entities = self.n_agents + self.n_prey
        if n_entities > n_cells:
            raise ValueError(
                f"grid {self.grid_size}x{self.grid_size} cannot hold "
                f"{self.n_agents} predators and {self.n_prey} prey"
            )
        cells = rng.choice(n_cells, size=n_entities, replace=False)
        coords = [divmod(int(c), self.grid_size) for c in cells]
        state = EnvState(
            grid_size=self.grid_size,
            predator_positions=tuple(coords[: self.n_agents]),
            prey_positions=tuple(coords[self.n_agents:]),
            prey_alive=(True,) * self.n_prey,
            step_count=0,
        )
        return state, self.observe_all(state)

    def step(
        self, state: EnvState, joint_action: Sequence[int], rng: np.random.Generator
    ) -> tuple[EnvState, np.ndarray, float, bool, StepInfo]:
        if len(joint_action) != self.n_agents:
            raise ValueError(
                f"joint action has {len(joint_action)} entries, expected {self.n_agents}"
            )
        actions = [int(a) for a in joint_action]
        if any(a < 0 or a >= N_ACTIONS for a in actions):
            raise ValueError(f"action out of range 0..{N_ACTIONS - 1}: {actions}")
        if self.is_terminal(state):
            raise ValueError("step called on a terminal state")

        g = self.grid_size
        predators = list(state.predator_positions)
        prey = list(state.prey_positions)
        alive = list(state.prey_alive)
        prey_cells = {p for p, a in zip(prey, alive) if a}

        # Moves resolve in agent-index order against already-updated positions.
        occupied = set(predators)
        for i, a in enumerate(actions):
            if a not in MOVES:
                continue
            dr, dc = MOVES[a]
            r, c = predators[i]
            target = (r + dr, c + dc)
            if not (0 <= target[0] < g and 0 <= target[1] < g):
                continue
            if target in occupied or target in prey_cells:
                continue
            occupied.discard(predators[i])
            occupied.add(target)
            predators[i] = target

        catchers = [predators[i] for i, a in enumerate(actions) if a == CATCH]
        captures = solo = 0
        for k in range(self.n_prey):
            if not alive[k]:
                continue
            pr, pc = prey[k]
            n_adjacent = sum(abs(r - pr) + abs(c - pc) == 1 for r, c in catchers)
            if n_adjacent >= 2:
                alive[k] = False
                captures += 1
            elif n_adjacent == 1:
                solo += 1
        reward = captures * 1.0 + solo * self.punishment

        # Surviving prey: uniform over {stay} and free neighbouring cells.
        taken = set(predators) | {p for p, a in zip(prey, alive) if a}
        for k in range(self.n_prey):
            if not alive[k]:
                continue
            r, c = prey[k]
            options = [(r, c)]
            for dr, dc in NEIGHBOURS:
                cell = (r + dr, c + dc)
                if 0 <= cell[0] < g and 0 <= cell[1] < g and cell not in taken:
                    options.append(cell)
            choice = options[int(rng.integers(len(options)))]
            taken.discard((r, c))
            taken.add(choice)
            prey[k] = choice

        new_state = EnvState(
            grid_size=g,
            predator_positions=tuple(predators),
            prey_positions=tuple(prey),
            prey_alive=tuple(alive),
            step_count=state.step_count + 1,
        )
        done = self.is_terminal(new_state)
        return new_state, self.observe_all(new_state), reward, done, StepInfo(captures, solo)

    def is_terminal(self, state: EnvState) -> bool:
        return state.n_alive == 0 or state.step_count >= self.episode_limit

    # -- observations --------------------------------------------------------

    def _padded_grid(self, state: EnvState) -> np.ndarray:
        r, g = self.radius, self.grid_size
        grid = np.zeros((N_CHANNELS, g + 2 * r, g + 2 * r), dtype=np.uint8)
        grid[WALL] = 1
        grid[WALL, r:r + g, r:r + g] = 0
        for pr, pc in state.predator_positions:
            grid[PREDATOR, pr + r, pc + r] = 1
        for (yr, yc), a in zip(state.prey_positions, state.prey_alive):
            if a:
                grid[PREY, yr + r, yc + r] = 1
        return grid

    def observe_all(self, state: EnvState) -> np.ndarray:
        """Observations of every agent, shape ``(n_agents, obs_dim)``, values in {0, 1}."""
        grid = self._padded_grid(state)
        w, r = self.window, self.radius
        out = np.empty((self.n_agents, N_CHANNELS, w, w), dtype=np.uint8)
        for i, (pr, pc) in enumerate(state.predator_positions):
            out[i] = grid[:, pr:pr + w, pc:pc + w]
            out[i, PREDATOR, r, r] = 0  # the observer itself
        return out.reshape(self.n_agents, self.obs_dim)

    def observe(self, state: EnvState, agent: int) -> np.ndarray:
        """Egocentric ``(channel, row, col)``-flattened window around ``agent``.

        Cells outside the grid are marked in the wall channel.
        """
        if not 0 <= agent < self.n_agents:
            raise IndexError(f"agent {agent} out of range")
        return self.observe_all(state)[agent]

    def state_vector(self, state: EnvState) -> np.ndarray:
        """Global state features for the mixer: scaled positions and alive flags."""
        scale = 1.0 / max(self.grid_size - 1, 1)
        pred = np.asarray(state.predator_positions, dtype=np.float64).ravel() * scale
        alive = np.asarray(state.prey_alive, dtype=np.float64)
        prey = np.asarray(state.prey_positions, dtype=np.float64) * scale * alive[:, None]
        return np.concatenate([pred, prey.ravel(), alive])


def write_transition_log(path: str | Path, rows: Iterable[dict]) -> None:
    """One CSV row per step: step, actions (space separated), reward, captures, solo_catches."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "actions", "reward", "captures", "solo_catches"])
        for row in rows:
            writer.writerow([
                row["step"],
                " ".join(str(int(a)) for a in row["actions"]),
                repr(float(row["reward"])),
                row["captures"],
                row["solo_catches"],
            ])


def read_transition_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {
                "step": int(r["step"]),
                "actions": [int(a) for a in r["actions"].split()],
                "reward": float(r["reward"]),
                "captures": int(r["captures"]),
                "solo_catches": int(r["solo_catches"]),
            }
            for r in csv.DictReader(fh)
        ]
