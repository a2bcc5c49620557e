import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accmer.core import (
    PRESETS, ConfigError, RngStreams, RunConfig, load_config, parse_config_text,
    rng_stream, serialize_config, validate_config,
)


def test_table_ii_values_accepted():
    cfg = validate_config({"batch_size": 256, "buffer": 100000, "lr": 0.001})
    assert cfg.batch_size == 256
    assert cfg.buffer_capacity == 100_000
    assert cfg.learning_rate == 0.001
    defaults = RunConfig()
    assert (defaults.batch_size, defaults.buffer_capacity, defaults.learning_rate,
            defaults.target_sync_episodes) == (256, 100_000, 0.001, 200)


def test_reuse_ratio_out_of_range():
    with pytest.raises(ConfigError, match=r"alpha out of \[0,1\]") as exc:
        validate_config({"reuse_ratio": 1.5})
    assert exc.value.field == "reuse_ratio"


def test_batch_larger_than_buffer():
    with pytest.raises(ConfigError, match="b > d"):
        validate_config({"batch_size": 128, "buffer": 64})


@pytest.mark.parametrize("raw, field", [
    ({"nonsense": 1}, "nonsense"),
    ({"n_agents": 1}, "n_agents"),
    ({"env_discount": 1.0}, "env_discount"),
    ({"weight_decay": 0.0}, "weight_decay"),
    ({"punishment": 0.5}, "punishment"),
    ({"sampler_mode": "proportional"}, "sampler_mode"),
    ({"batch_size": "many"}, "batch_size"),
    ({"batch_size": 2.5}, "batch_size"),
])
def test_rejections_name_the_field(raw, field):
    with pytest.raises(ConfigError) as exc:
        validate_config(raw)
    assert exc.value.field == field


def test_presets():
    pp0 = load_config(preset="pp0", environ={})
    assert (pp0.batch_size, pp0.buffer_capacity, pp0.punishment) == (256, 100_000, 0.0)
    pp15 = load_config(preset="pp15", environ={})
    assert (pp15.batch_size, pp15.buffer_capacity, pp15.punishment) == (128, 10_000, -1.5)
    assert pp15.weight_decay == 0.8
    scale = load_config(preset="pp-scale", environ={})
    assert (scale.reuse_ratio, scale.batch_size, scale.buffer_capacity, scale.weight_decay) == (
        0.5, 128, 10_000, 0.8)
    smoke = load_config(preset="smoke", environ={})
    assert (smoke.n_agents, smoke.grid_size, smoke.buffer_capacity, smoke.double_q) == (
        4, 7, 50_000, True)
    assert set(PRESETS) == {"pp0", "pp15", "pp-scale", "smoke"}


def test_file_then_overrides_then_env(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# experiment\nbatch_size = 32\nbuffer_capacity = 1000\nseed = 5\n")
    cfg = load_config(path, {"batch_size": 64}, environ={})
    assert (cfg.batch_size, cfg.buffer_capacity, cfg.seed) == (64, 1000, 5)
    cfg = load_config(path, {"seed": 9}, environ={"ACCMER_SEED": "77"})
    assert cfg.seed == 77


def test_parse_rejects_garbage_line():
    with pytest.raises(ConfigError):
        parse_config_text("batch_size 32\n")


def test_reuse_size_and_window():
    cfg = validate_config({"buffer_capacity": 16, "batch_size": 6, "reuse_ratio": 0.5})
    assert cfg.reuse_size == 3
    assert cfg.reuse_window == 2
    assert validate_config({"batch_size": 7, "reuse_ratio": 0.5}).reuse_size == 3


configs = st.builds(
    dict,
    n_agents=st.integers(2, 16),
    grid_size=st.integers(5, 30),
    punishment=st.floats(-5, 0),
    buffer_capacity=st.integers(256, 10**6),
    batch_size=st.integers(1, 256),
    reuse_ratio=st.floats(0, 1),
    env_discount=st.floats(0, 0.999),
    weight_decay=st.floats(0.01, 1),
    learning_rate=st.floats(1e-6, 1),
    sampler_mode=st.sampled_from(["uniform", "prioritized", "accmer"]),
    record_timing=st.booleans(),
    seed=st.integers(0, 2**64 - 1),
)


@given(configs)
@settings(max_examples=100, deadline=None)
def test_serialize_round_trip(raw):
    cfg = validate_config(raw)
    assert validate_config(parse_config_text(serialize_config(cfg))) == cfg


def test_streams_are_independent_and_stable():
    a = RngStreams(42)
    first_env = a["env"].integers(0, 2**32, 5)
    b = RngStreams(42)
    b["some-new-consumer"].random(100)  # adding a consumer must not shift others
    assert np.array_equal(b["env"].integers(0, 2**32, 5), first_env)
    assert not np.array_equal(rng_stream(42, "sampler").integers(0, 2**32, 5), first_env)
    assert not np.array_equal(rng_stream(43, "env").integers(0, 2**32, 5), first_env)
