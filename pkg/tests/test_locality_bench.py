import numpy as np
import pytest

from accmer.locality_bench import (
    CacheConfig, compare_modes, distinct_per_window, run_bench, run_workload, simulate_cache,
    slots_to_lines,
)
from accmer.sampler import AccessTrace


def reference_lru(lines, n_sets, ways):
    """Per-set recency lists, most recent last; returns a hit/miss flag per access."""
    sets = [[] for _ in range(n_sets)]
    out = []
    for line in lines:
        s = sets[line % n_sets]
        if line in s:
            s.remove(line)
            s.append(line)
            out.append(True)
        else:
            if len(s) == ways:
                s.pop(0)
            s.append(line)
            out.append(False)
    return out


def test_hand_trace_two_way():
    cfg = CacheConfig(capacity_bytes=256, line_bytes=64, associativity=2, transition_bytes=64)
    assert (cfg.n_sets, cfg.ways) == (2, 2)
    lines = [0, 2, 0, 4, 2, 1, 0, 1]
    # M M H M M M M H: 4 evicts 2, then 2 evicts 0, then 0 evicts 4
    assert reference_lru(lines, 2, 2) == [False, False, True, False, False, False, False, True]
    assert simulate_cache(lines, cfg) == (2, 6)


def test_matches_reference_on_random_traces():
    rng = np.random.default_rng(0)
    shapes = [(64, 16, 1), (128, 16, 2), (256, 16, 4), (256, 16, 0), (512, 32, 2)]
    total = 0
    for trial in range(100_000):
        cap, line, assoc = shapes[trial % len(shapes)]
        cfg = CacheConfig(cap, line, assoc, line)
        lines = rng.integers(0, 3 * cfg.n_lines, size=int(rng.integers(1, 12)))
        flags = reference_lru(lines.tolist(), cfg.n_sets, cfg.ways)
        assert simulate_cache(lines, cfg) == (sum(flags), len(flags) - sum(flags))
        total += 1
    assert total == 100_000


def test_slots_to_lines():
    cfg = CacheConfig(transition_bytes=256, line_bytes=64)
    assert slots_to_lines(np.array([0, 2]), cfg).tolist() == [0, 1, 2, 3, 8, 9, 10, 11]
    small = CacheConfig(capacity_bytes=1024, line_bytes=64, associativity=1, transition_bytes=16)
    assert slots_to_lines(np.array([0, 3, 4, 5]), small).tolist() == [0, 0, 1, 1]
    odd = CacheConfig(capacity_bytes=1024, line_bytes=64, associativity=1, transition_bytes=96)
    # slot 1 spans bytes 96..191 -> lines 1 and 2
    assert slots_to_lines(np.array([1]), odd).tolist() == [1, 2]
    assert slots_to_lines(np.array([], dtype=int), cfg).size == 0


def test_repeats_and_thrash():
    cfg = CacheConfig(capacity_bytes=256, line_bytes=64, associativity=2, transition_bytes=64)
    assert simulate_cache([5] * 7, cfg) == (6, 1)
    # three lines in one 2-way set cycling evict each other every time
    assert simulate_cache([0, 2, 4] * 5, cfg) == (0, 15)
    assert simulate_cache([], cfg) == (0, 0)


def test_misses_monotone_in_capacity_fully_associative():
    rng = np.random.default_rng(4)
    lines = rng.zipf(1.3, size=5000) % 400
    misses = [simulate_cache(lines, CacheConfig(cap, 64, 0, 64))[1]
              for cap in (64 * 4, 64 * 16, 64 * 64, 64 * 256)]
    assert misses == sorted(misses, reverse=True)


@pytest.mark.parametrize("kw", [
    dict(line_bytes=48), dict(capacity_bytes=0), dict(associativity=-1),
    dict(capacity_bytes=1000), dict(transition_bytes=0),
])
def test_cache_config_validation(kw):
    with pytest.raises(ValueError):
        CacheConfig(**kw)


def test_compare_modes_identical_traces_and_mismatch():
    trace, _ = run_workload("uniform", 200, 10, 0.5, 50, seed=2)
    cfg = CacheConfig(capacity_bytes=4096, line_bytes=64, associativity=2)
    report = compare_modes(cfg, {"uniform": trace, "accmer": trace}, 20)
    acc = report["rows"][1]
    assert acc["miss_rate_delta"] == 0.0 and acc["relative_miss_reduction"] == 0.0
    short = AccessTrace(trace.batch[:5], trace.slot[:5], trace.reuse[:5], 20)
    with pytest.raises(ValueError, match="mismatched"):
        compare_modes(cfg, {"uniform": trace, "accmer": short}, 20)


def test_distinct_per_window():
    trace = AccessTrace(np.array([0, 0, 1, 1, 2, 2]), np.array([1, 2, 2, 3, 4, 4]),
                        np.zeros(6, dtype=np.uint8), 2)
    assert distinct_per_window(trace, 2).tolist() == [3]
    assert distinct_per_window(trace, 1).tolist() == [2, 2, 1]


def test_reuse_ratio_ordering():
    cfg = CacheConfig(capacity_bytes=64 * 1024, line_bytes=64, associativity=8,
                      transition_bytes=256)
    rates, distinct = [], []
    for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
        trace, _ = run_workload("accmer", 2000, 32, alpha, 620, seed=3)
        report = compare_modes(cfg, {"accmer": trace}, 2000 // 32)
        rates.append(report["rows"][0]["miss_rate"])
        distinct.append(report["rows"][0]["distinct_slots_mean"])
    assert rates[-1] == min(rates)
    assert distinct == sorted(distinct, reverse=True)


def test_run_bench_deterministic_and_complete():
    cfg = CacheConfig(capacity_bytes=16 * 1024, line_bytes=64, associativity=4)
    a = run_bench(cfg, 500, 16, 0.5, 100, seed=9)
    b = run_bench(cfg, 500, 16, 0.5, 100, seed=9)
    strip = lambda r: [{k: v for k, v in row.items() if "wall" not in k} for row in r["rows"]]
    assert strip(a) == strip(b)
    assert [r["mode"] for r in a["rows"]] == ["uniform", "prioritized", "accmer"]
    assert a["window_length"] == 31 and a["reuse_size"] == 8
    assert all(r["hits"] + r["misses"] == 100 * 16 * 4 for r in a["rows"])
