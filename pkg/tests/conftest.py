import sys

import numpy as np
import pytest

from accmer.core import validate_config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    """Tiny but complete run configuration for fast loop tests."""
    return validate_config(dict(
        n_agents=2, n_prey=2, grid_size=5, buffer_capacity=64, batch_size=8,
        reuse_ratio=0.5, total_steps=120, eval_interval=40, eval_episodes=2,
        episode_limit=30, agent_hidden=8, mixer_hidden=4, target_sync_episodes=2,
        epsilon_anneal_steps=100, seed=3,
    ))


def pytest_terminal_summary(terminalreporter):
    """Print one line per acceptance criterion that ran."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results):
            terminalreporter.write_line(line)
