import numpy as np
import pytest

from accmer.core import validate_config
from accmer.env import (
    CATCH, DOWN, LEFT, PREDATOR, PREY, RIGHT, STAY, UP, WALL, EnvState, PredatorPrey,
    read_transition_log, write_transition_log,
)


def make_env(**kw):
    base = dict(n_agents=2, n_prey=1, grid_size=5, punishment=0.0)
    base.update(kw)
    return PredatorPrey(validate_config(base))


def state_of(env, predators, prey, alive=None, step=0):
    return EnvState(env.grid_size, tuple(predators), tuple(prey),
                    tuple(alive or [True] * len(prey)), step)


def test_reset_places_distinct_entities():
    env = PredatorPrey(validate_config(dict(n_agents=8, n_prey=8, grid_size=10)))
    state, obs = env.reset(np.random.default_rng(0))
    cells = set(state.predator_positions) | set(state.prey_positions)
    assert len(cells) == 16
    assert all(0 <= r < 10 and 0 <= c < 10 for r, c in cells)
    assert state.step_count == 0 and all(state.prey_alive)
    assert obs.shape == (8, env.obs_dim)


def test_reset_capacity_error():
    env = PredatorPrey(validate_config(dict(n_agents=8, n_prey=1, grid_size=2)))
    with pytest.raises(ValueError, match="cannot hold"):
        env.reset(np.random.default_rng(0))


def test_reset_deterministic():
    env = make_env(n_agents=4, n_prey=4, grid_size=7)
    s1, o1 = env.reset(np.random.default_rng(5))
    s2, o2 = env.reset(np.random.default_rng(5))
    assert s1 == s2 and np.array_equal(o1, o2)


def test_joint_catch_captures():
    env = make_env()
    s = state_of(env, [(2, 1), (2, 3)], [(2, 2)])
    ns, _, reward, done, info = env.step(s, [CATCH, CATCH], np.random.default_rng(0))
    assert reward == 1.0
    assert ns.prey_alive == (False,)
    assert done and info.captures == 1 and info.solo_catches == 0


def test_solo_catch_punished():
    env = make_env(punishment=-1.5)
    s = state_of(env, [(2, 1), (0, 4)], [(2, 2)])
    ns, _, reward, done, info = env.step(s, [CATCH, STAY], np.random.default_rng(0))
    assert reward == -1.5
    assert ns.prey_alive == (True,) and not done
    assert info.solo_catches == 1


def test_null_action_only_prey_moves():
    env = make_env()
    s = state_of(env, [(0, 0), (4, 4)], [(2, 2)])
    ns, _, reward, _, _ = env.step(s, [STAY, STAY], np.random.default_rng(1))
    assert reward == 0.0
    assert ns.predator_positions == s.predator_positions
    pr, pc = ns.prey_positions[0]
    assert abs(pr - 2) + abs(pc - 2) <= 1
    assert ns.step_count == 1


def test_moves_blocked_by_walls_and_predators():
    env = make_env(n_agents=3)
    s = state_of(env, [(0, 0), (0, 1), (3, 3)], [(4, 0)])
    # agent 0 tries into the wall, agent 1 tries into agent 0, agent 2 moves freely
    ns, *_ = env.step(s, [UP, LEFT, RIGHT], np.random.default_rng(0))
    assert ns.predator_positions == ((0, 0), (0, 1), (3, 4))


def test_move_conflict_resolved_in_index_order():
    env = make_env(n_agents=2)
    s = state_of(env, [(1, 0), (1, 2)], [(4, 4)])
    ns, *_ = env.step(s, [RIGHT, LEFT], np.random.default_rng(0))
    assert ns.predator_positions == ((1, 1), (1, 2))


def test_step_errors():
    env = make_env()
    s = state_of(env, [(0, 0), (4, 4)], [(2, 2)])
    with pytest.raises(ValueError):
        env.step(s, [STAY], np.random.default_rng(0))
    with pytest.raises(ValueError):
        env.step(s, [STAY, 9], np.random.default_rng(0))
    done_state = state_of(env, [(0, 0), (4, 4)], [(2, 2)], alive=[False])
    with pytest.raises(ValueError):
        env.step(done_state, [STAY, STAY], np.random.default_rng(0))


def test_episode_limit():
    env = PredatorPrey(validate_config(dict(n_agents=2, n_prey=1, grid_size=5, episode_limit=3)))
    s = state_of(env, [(0, 0), (4, 4)], [(2, 2)])
    rng = np.random.default_rng(0)
    for _ in range(2):
        s, _, _, done, _ = env.step(s, [STAY, STAY], rng)
        assert not done
    s, _, _, done, _ = env.step(s, [STAY, STAY], rng)
    assert done and s.n_alive == 1


def test_observation_corner_walls():
    env = make_env()
    s = state_of(env, [(0, 0), (4, 4)], [(1, 1)])
    obs = env.observe(s, 0).reshape(3, 5, 5)
    assert obs[WALL, :2, :].all() and obs[WALL, :, :2].all()
    assert not obs[WALL, 2:, 2:].any()
    assert obs[PREY, 3, 3] == 1 and obs[PREY].sum() == 1
    assert obs[PREDATOR].sum() == 0  # other predator out of view, self excluded


def test_observation_sees_other_predator_and_is_pure():
    env = make_env()
    s = state_of(env, [(2, 2), (3, 4)], [(0, 0)])
    obs = env.observe(s, 0).reshape(3, 5, 5)
    assert obs[PREDATOR, 3, 4] == 1 and obs[PREDATOR].sum() == 1
    assert obs[PREY, 0, 0] == 1
    assert np.array_equal(env.observe(s, 0), env.observe(s, 0))
    assert set(np.unique(env.observe_all(s))) <= {0, 1}
    with pytest.raises(IndexError):
        env.observe(s, 2)


def test_reward_decomposition_and_conservation(tmp_path):
    """Recount rewards from the exported log and check entity conservation."""
    cfg = validate_config(dict(n_agents=4, n_prey=4, grid_size=5, punishment=-0.5,
                               episode_limit=300))
    env = PredatorPrey(cfg)
    rng = np.random.default_rng(11)
    state, _ = env.reset(rng)
    rows, alive_counts = [], [state.n_alive]
    done = False
    while not done:
        # bias towards catching so both capture kinds occur
        actions = np.where(rng.random(4) < 0.5, CATCH, rng.integers(0, 5, size=4))
        state, _, reward, done, info = env.step(state, actions, rng)
        rows.append(dict(step=state.step_count, actions=actions, reward=reward,
                         captures=info.captures, solo_catches=info.solo_catches))
        assert len(state.predator_positions) == 4
        alive_counts.append(state.n_alive)
    write_transition_log(tmp_path / "log.csv", rows)
    back = read_transition_log(tmp_path / "log.csv")
    assert len(back) == len(rows)
    for row in back:
        assert row["reward"] == pytest.approx(row["captures"] + row["solo_catches"] * -0.5)
    assert all(a >= b for a, b in zip(alive_counts, alive_counts[1:]))
    assert sum(r["captures"] for r in back) == 4 - state.n_alive
    assert any(r["solo_catches"] for r in back)


def test_no_punishment_return_equals_captures():
    cfg = validate_config(dict(n_agents=4, n_prey=3, grid_size=5))
    env = PredatorPrey(cfg)
    rng = np.random.default_rng(2)
    state, _ = env.reset(rng)
    total, done = 0.0, False
    while not done:
        state, _, r, done, _ = env.step(state, rng.integers(0, 6, size=4), rng)
        total += r
    assert total == 3 - state.n_alive


def test_state_vector_shape():
    env = make_env(n_agents=3, n_prey=2)
    s = state_of(env, [(0, 0), (4, 4), (2, 2)], [(1, 1), (3, 3)], alive=[True, False])
    v = env.state_vector(s)
    assert v.shape == (env.state_dim,)
    assert v[-2:].tolist() == [1.0, 0.0]
