"""Mini-batch construction over the replay buffer.

Three modes share one code path for the uniform part:

``accmer``
    A reuse set of ``floor(alpha*b)`` top-weight slots is ranked once and kept
    for ``floor(d/b)`` consecutive batches; the rest of each batch is drawn
    uniformly from the complement.
``uniform``
    ``b`` distinct slots drawn uniformly (the accmer path with an empty reuse set).
``prioritized``
    Reference mode: every call re-ranks the table and takes the top ``b``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .replay import WeightTable, top_k

EMPTY = np.empty(0, dtype=np.int64)


@dataclass(frozen=True)
class SampleBatch:
    reuse_indices: np.ndarray
    fresh_indices: np.ndarray
    step_in_window: int
    batch_number: int

    @property
    def indices(self) -> np.ndarray:
        """Reuse slots followed by fresh slots."""
        return np.concatenate([self.reuse_indices, self.fresh_indices])

    @property
    def reuse_flags(self) -> np.ndarray:
        flags = np.zeros(self.reuse_indices.size + self.fresh_indices.size, dtype=np.uint8)
        flags[: self.reuse_indices.size] = 1
        return flags

    def __len__(self) -> int:
        return self.reuse_indices.size + self.fresh_indices.size


def sample_complement(
    rng: np.random.Generator, fill_count: int, excluded, count: int
) -> np.ndarray:
    """``count`` distinct slots drawn uniformly from ``[0, fill_count) \\ excluded``.

    Sparse draws use sequential rejection, which costs O(count) rather than
    O(fill_count); dense draws fall back to a permutation of the complement.
    """
    excluded = np.asarray(excluded, dtype=np.int64)
    available = fill_count - excluded.size
    if count < 0:
        raise ValueError("count must be >= 0")
    if count > available:
        raise ValueError(f"complement has {available} slots, {count} requested")
    if count == 0:
        return EMPTY
    if 2 * count > available:
        mask = np.ones(fill_count, dtype=bool)
        mask[excluded] = False
        pool = np.flatnonzero(mask)
        return rng.permutation(pool)[:count]
    seen = set(excluded.tolist())
    out: list[int] = []
    while len(out) < count:
        need = count - len(out)
        for s in rng.integers(0, fill_count, size=need + 8).tolist():
            if s not in seen:
                seen.add(s)
                out.append(s)
                if len(out) == count:
                    break
    return np.asarray(out, dtype=np.int64)


def refresh_reuse_set(table: WeightTable, reuse_size: int, batch_size: int) -> np.ndarray:
    if table.size < batch_size:
        raise ValueError(f"buffer underfilled: {table.size} < batch size {batch_size}")
    return top_k(table, reuse_size)


@dataclass
class Sampler:
    mode: str
    batch_size: int
    reuse_size: int
    window: int
    reuse_cache: np.ndarray | None = None
    step_in_window: int = 0
    batches_issued: int = 0

    def __post_init__(self):
        if self.mode not in ("uniform", "prioritized", "accmer"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if not 0 <= self.reuse_size <= self.batch_size:
            raise ValueError("reuse size must lie in [0, batch_size]")
        if self.window < 1:
            raise ValueError("reuse window must be >= 1 (batch size exceeds capacity?)")

    @classmethod
    def from_config(cls, config) -> "Sampler":
        return cls(
            mode=config.sampler_mode,
            batch_size=config.batch_size,
            reuse_size=config.reuse_size,
            window=config.reuse_window,
        )

    def next_batch(self, rng: np.random.Generator, table: WeightTable) -> SampleBatch:
        b = self.batch_size
        fill = table.size
        if fill < b:
            raise ValueError(f"buffer underfilled: {fill} < batch size {b}")
        number = self.batches_issued
        self.batches_issued += 1

        if self.mode == "prioritized":
            return SampleBatch(EMPTY, top_k(table, b), 0, number)
        if self.mode == "uniform":
            return SampleBatch(EMPTY, sample_complement(rng, fill, EMPTY, b), 0, number)

        if self.reuse_cache is None or self.step_in_window >= self.window:
            self.reuse_cache = refresh_reuse_set(table, self.reuse_size, b)
            self.step_in_window = 0
        reuse = self.reuse_cache
        fresh = sample_complement(rng, fill, reuse, b - reuse.size)
        batch = SampleBatch(reuse, fresh, self.step_in_window, number)
        self.step_in_window += 1
        return batch

    def snapshot(self) -> dict:
        return {
            "mode": self.mode,
            "reuse_cache": None if self.reuse_cache is None else self.reuse_cache.tolist(),
            "step_in_window": self.step_in_window,
            "batches_issued": self.batches_issued,
        }


# --------------------------------------------------------------------------
# Access traces
#
# Binary layout (little-endian):
#   magic b"ACCMERT\0", <u4 version, <u4 window, <u8 record count,
#   then packed records of (<u4 batch_number, <u4 slot_index, u1 reuse_flag).
# CSV layout: header "batch_number,slot_index,reuse_flag", one access per row.
# --------------------------------------------------------------------------

TRACE_MAGIC = b"ACCMERT\0"
TRACE_VERSION = 1
_TRACE_HEADER = struct.Struct("<8sIIQ")
TRACE_DTYPE = np.dtype([("batch", "<u4"), ("slot", "<u4"), ("reuse", "u1")])


@dataclass
class AccessTrace:
    """Ordered ``(batch_number, slot_index, reuse_flag)`` records."""

    batch: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    slot: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    reuse: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint8))
    window: int = 1

    def __len__(self) -> int:
        return int(self.slot.size)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AccessTrace)
            and np.array_equal(self.batch, other.batch)
            and np.array_equal(self.slot, other.slot)
            and np.array_equal(self.reuse, other.reuse)
        )

    @property
    def n_batches(self) -> int:
        return int(self.batch.max()) + 1 if self.batch.size else 0


class TraceRecorder:
    """Append-only collector fed one :class:`SampleBatch` at a time."""

    def __init__(self, window: int = 1):
        self.window = window
        self._batch: list[np.ndarray] = []
        self._slot: list[np.ndarray] = []
        self._reuse: list[np.ndarray] = []

    def record(self, batch: SampleBatch) -> None:
        idx = batch.indices
        self._batch.append(np.full(idx.size, batch.batch_number, dtype=np.int64))
        self._slot.append(idx.astype(np.int64, copy=False))
        self._reuse.append(batch.reuse_flags)

    def trace(self) -> AccessTrace:
        if not self._slot:
            return AccessTrace(window=self.window)
        return AccessTrace(
            np.concatenate(self._batch), np.concatenate(self._slot),
            np.concatenate(self._reuse), self.window,
        )


def write_trace(path: str | Path, trace: AccessTrace) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["batch_number", "slot_index", "reuse_flag"])
            w.writerows(zip(trace.batch.tolist(), trace.slot.tolist(), trace.reuse.tolist()))
        return
    rec = np.empty(len(trace), dtype=TRACE_DTYPE)
    rec["batch"], rec["slot"], rec["reuse"] = trace.batch, trace.slot, trace.reuse
    with open(path, "wb") as fh:
        fh.write(_TRACE_HEADER.pack(TRACE_MAGIC, TRACE_VERSION, trace.window, len(trace)))
        fh.write(rec.tobytes())


def read_trace(path: str | Path) -> AccessTrace:
    """Load a binary or CSV trace; raises ``ValueError`` on malformed input."""
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(TRACE_MAGIC):
        if len(data) < _TRACE_HEADER.size:
            raise ValueError("truncated trace header")
        _, version, window, count = _TRACE_HEADER.unpack_from(data)
        if version != TRACE_VERSION:
            raise ValueError(f"unsupported trace version {version}")
        body = data[_TRACE_HEADER.size:]
        if len(body) != count * TRACE_DTYPE.itemsize:
            raise ValueError("trace record count does not match file size")
        rec = np.frombuffer(body, dtype=TRACE_DTYPE)
        return AccessTrace(
            rec["batch"].astype(np.int64), rec["slot"].astype(np.int64),
            rec["reuse"].astype(np.uint8), int(window),
        )
    try:
        rows = list(csv.reader(data.decode().splitlines()))
    except UnicodeDecodeError:
        raise ValueError(f"{path}: neither a binary trace nor CSV") from None
    if not rows or [c.strip() for c in rows[0]] != ["batch_number", "slot_index", "reuse_flag"]:
        raise ValueError(f"{path}: missing trace CSV header")
    try:
        arr = np.array([[int(c) for c in r] for r in rows[1:] if r], dtype=np.int64)
    except ValueError:
        raise ValueError(f"{path}: non-integer trace field") from None
    if arr.size == 0:
        return AccessTrace()
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.min() < 0:
        raise ValueError(f"{path}: malformed trace rows")
    return AccessTrace(arr[:, 0], arr[:, 1], arr[:, 2].astype(np.uint8))
