"""Frame-stepped Monte-Carlo simulation of semi-persistent slot reservation.

Every frame each node either keeps its slot or reselects uniformly among
the slots that were empty in the previous frame.  The empty set is taken
once per frame boundary, before any node moves, so simultaneous movers may
land on the same slot.

Random draws are laid out as ``k`` streams of ``V`` uniforms per frame
(``k = 2`` for the geometric counter, 3 for the uniform counter), drawn from
a Philox generator in frame order.  ``step_frame`` and ``run_simulation``
consume the same layout, so they produce the same trajectory for a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .config import ConfigError, SystemConfig, UniformCounter
from .pmf import Pmf

CHUNK_FRAMES = 8192


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _n_streams(config: SystemConfig) -> int:
    return 3 if isinstance(config.counter, UniformCounter) else 2


@dataclass(frozen=True, eq=False)
class ChannelState:
    frame_index: int
    slots: np.ndarray
    reservation_age: np.ndarray
    pending_counter: np.ndarray

    def frame_states(self) -> np.ndarray:
        counts = np.bincount(self.slots)
        return counts[self.slots]

    def empty_slots(self, frame_size: int) -> np.ndarray:
        occupied = np.zeros(frame_size, dtype=bool)
        occupied[self.slots] = True
        return np.flatnonzero(~occupied)


def initial_state(config: SystemConfig, rng: np.random.Generator | None = None) -> ChannelState:
    """Collision-free start: node ``i`` (0-based) in slot ``i + 1``, frame 1.

    Uniform-counter runs draw the initial counters from ``rng`` when given,
    otherwise every counter starts at its upper bound.
    """
    V, m = config.num_nodes, config.frame_size
    if V >= m:
        raise ConfigError("initial state needs num_nodes < frame_size")
    counters = np.zeros(V, dtype=np.int64)
    if isinstance(config.counter, UniformCounter):
        lo, hi = config.counter.low, config.counter.high
        if rng is None:
            counters[:] = hi
        else:
            counters[:] = lo + (rng.random(V) * (hi - lo + 1)).astype(np.int64)
    return ChannelState(
        frame_index=1,
        slots=np.arange(1, V + 1, dtype=np.int64),
        reservation_age=np.ones(V, dtype=np.int64),
        pending_counter=counters,
    )


def step_frame(state: ChannelState, config: SystemConfig, rng: np.random.Generator) -> ChannelState:
    """Advance one frame (reference implementation, one frame at a time)."""
    V = config.num_nodes
    draws = rng.random((_n_streams(config), V))
    empties = state.empty_slots(config.frame_size)
    assert len(empties) > 0, "no empty slot although V < m"

    slots = state.slots.copy()
    ages = state.reservation_age + 1
    counters = state.pending_counter.copy()
    if isinstance(config.counter, UniformCounter):
        c = config.counter
        expired = counters == 0
        fresh = c.low + (draws[2] * (c.high - c.low + 1)).astype(np.int64)
        counters[expired] = fresh[expired]
        moves = expired & (draws[0] >= c.keep_prob)
        counters -= 1
    else:
        moves = draws[0] < config.ending_prob
    picks = empties[(draws[1] * len(empties)).astype(np.int64)]
    slots[moves] = picks[moves]
    ages[moves] = 1
    return ChannelState(state.frame_index + 1, slots, ages, counters)


@numba.njit(cache=True)
def _advance(slots, ages, counters, draws, frame_size, p_end, uniform, low, high, keep_prob,
             out_slots, out_state, out_empty, record):
    n_frames = draws.shape[0]
    V = slots.shape[0]
    occupancy = np.zeros(frame_size, np.int64)
    empties = np.empty(frame_size, np.int64)
    for v in range(V):
        occupancy[slots[v]] += 1
    for f in range(n_frames):
        n_empty = 0
        for s in range(frame_size):
            if occupancy[s] == 0:
                empties[n_empty] = s
                n_empty += 1
        for v in range(V):
            if uniform:
                move = False
                if counters[v] == 0:
                    counters[v] = low + int(draws[f, 2, v] * (high - low + 1))
                    move = draws[f, 0, v] >= keep_prob
                counters[v] -= 1
            else:
                move = draws[f, 0, v] < p_end
            if move:
                slots[v] = empties[int(draws[f, 1, v] * n_empty)]
                ages[v] = 1
            else:
                ages[v] += 1
        occupancy[:] = 0
        for v in range(V):
            occupancy[slots[v]] += 1
        if record:
            n_empty = 0
            for s in range(frame_size):
                if occupancy[s] == 0:
                    n_empty += 1
            out_empty[f] = n_empty
            for v in range(V):
                out_slots[f, v] = slots[v]
                out_state[f, v] = occupancy[slots[v]]


def _state_dtype(num_nodes: int):
    return np.uint8 if num_nodes < 256 else np.uint16


def _slot_dtype(frame_size: int):
    return np.int16 if frame_size <= np.iinfo(np.int16).max else np.int32


@dataclass(frozen=True, eq=False)
class FrameRecord:
    index: int
    slots: np.ndarray
    frame_state: np.ndarray
    empty_count: int
    reselected: np.ndarray


@dataclass(frozen=True, eq=False)
class TraceSet:
    """Per-frame channel record of the measured frames.

    Arrays carry one leading context row (the last unmeasured frame) so that
    quantities referring to the previous frame are defined for the first
    measured frame.  ``context_age`` is the reservation age in that row.
    """

    config: SystemConfig
    all_slots: np.ndarray
    all_frame_state: np.ndarray
    all_empty_count: np.ndarray
    context_age: np.ndarray
    first_frame: int
    final_state: ChannelState
    metadata: dict = field(default_factory=dict)

    @property
    def slots(self) -> np.ndarray:
        return self.all_slots[1:]

    @property
    def frame_state(self) -> np.ndarray:
        return self.all_frame_state[1:]

    @property
    def empty_count(self) -> np.ndarray:
        return self.all_empty_count[1:]

    @property
    def num_frames(self) -> int:
        return self.all_slots.shape[0] - 1

    @property
    def total_frames(self) -> int:
        return self.first_frame + self.num_frames - 1

    def __len__(self):
        return self.num_frames

    def reselected(self, node: int | None = None) -> np.ndarray:
        """True where a node's slot differs from the previous frame."""
        if node is None:
            return self.all_slots[1:] != self.all_slots[:-1]
        return self.all_slots[1:, node] != self.all_slots[:-1, node]

    def reservation_age(self, node: int) -> np.ndarray:
        """Reservation age of ``node`` for the context row and every measured frame."""
        return _ages(self.all_slots[:, node], int(self.context_age[node]))

    def frame(self, i: int) -> FrameRecord:
        return FrameRecord(
            index=self.first_frame + i,
            slots=self.slots[i],
            frame_state=self.frame_state[i],
            empty_count=int(self.empty_count[i]),
            reselected=self.all_slots[i + 1] != self.all_slots[i],
        )


@numba.njit(cache=True)
def _ages(slots, first_age):
    out = np.empty(slots.shape[0], np.int64)
    out[0] = first_age
    for i in range(1, slots.shape[0]):
        out[i] = 1 if slots[i] != slots[i - 1] else out[i - 1] + 1
    return out


def _counter_args(config: SystemConfig):
    c = config.counter
    if isinstance(c, UniformCounter):
        return True, c.low, c.high, c.keep_prob
    return False, 0, 0, 0.0


def run_simulation(config: SystemConfig, chunk_frames: int = CHUNK_FRAMES) -> TraceSet:
    """Run warm-up plus measured frames from the collision-free start."""
    V, m = config.num_nodes, config.frame_size
    rng = make_rng(config.seed)
    state = initial_state(config, rng)
    slots = state.slots.copy()
    ages = state.reservation_age.copy()
    counters = state.pending_counter.copy()
    k = _n_streams(config)
    uniform, low, high, keep = _counter_args(config)

    F = config.measured_frames
    out_slots = np.empty((F + 1, V), dtype=_slot_dtype(m))
    out_state = np.empty((F + 1, V), dtype=_state_dtype(V))
    out_empty = np.empty(F + 1, dtype=np.int32)
    dummy2 = np.empty((1, V), dtype=out_slots.dtype)
    dummy_state = np.empty((1, V), dtype=out_state.dtype)
    dummy1 = np.empty(1, dtype=np.int32)

    # warm-up, keeping the last warm-up frame (or the start frame) as context
    remaining = config.warmup_frames
    while remaining > 0:
        n = min(chunk_frames, remaining)
        draws = rng.random((n, k, V))
        _advance(slots, ages, counters, draws, m, config.ending_prob, uniform, low, high, keep,
                 dummy2, dummy_state, dummy1, False)
        remaining -= n
    out_slots[0] = slots
    counts = np.bincount(slots, minlength=m)
    out_state[0] = counts[slots]
    out_empty[0] = int(np.count_nonzero(counts == 0))
    context_age = ages.copy()

    done = 0
    while done < F:
        n = min(chunk_frames, F - done)
        draws = rng.random((n, k, V))
        _advance(slots, ages, counters, draws, m, config.ending_prob, uniform, low, high, keep,
                 out_slots[1 + done:1 + done + n], out_state[1 + done:1 + done + n],
                 out_empty[1 + done:1 + done + n], True)
        done += n

    first = 1 + config.warmup_frames + 1
    final = ChannelState(first + F - 1, slots, ages, counters)
    metadata = {"rng": "philox", "streams_per_frame": k}
    if uniform:
        metadata["counter_semantics"] = (
            "counter decremented after each transmission; expiry checked at the next frame boundary")
    return TraceSet(config, out_slots, out_state, out_empty, context_age, first, final, metadata)


def empirical_slot_marginal(traces: TraceSet, node: int = 0, pool: bool = False) -> Pmf:
    """Relative frequency of ``node``'s slot over the measured frames, or of
    every node's slot when ``pool`` is set (nodes are exchangeable)."""
    if traces.num_frames == 0:
        raise ValueError("empty trace")
    slots = traces.slots if pool else traces.slots[:, node]
    counts = np.bincount(slots.astype(np.int64).ravel(), minlength=traces.config.frame_size)
    return Pmf.from_counts(counts)


def trace_record_dtype(num_nodes: int) -> np.dtype:
    return np.dtype([("frame", "<u4"), ("slots", "<u2", (num_nodes,)), ("state", "u1", (num_nodes,))])


def write_trace_dump(traces: TraceSet, path) -> Path:
    """Binary dump of the measured frames: u32 frame index, u16 slot and u8
    frame state per node, little endian, no header."""
    V = traces.config.num_nodes
    if V > 255:
        raise ValueError("frame state does not fit in u8 for more than 255 nodes")
    if traces.config.frame_size > 65535:
        raise ValueError("slot index does not fit in u16")
    rec = np.empty(traces.num_frames, dtype=trace_record_dtype(V))
    rec["frame"] = np.arange(traces.first_frame, traces.first_frame + traces.num_frames)
    rec["slots"] = traces.slots
    rec["state"] = traces.frame_state
    path = Path(path)
    rec.tofile(path)
    return path


def read_trace_dump(path, num_nodes: int) -> np.ndarray:
    return np.fromfile(path, dtype=trace_record_dtype(num_nodes))
