"""Age of Information of a tagged node, read off simulator traces.

Time ``t`` counts slots from the start of the first measured frame, so
frame ``t // m`` and position ``t % m``.  A status sample is taken at
position 0 of every frame and delivered if the node's transmission in that
frame is a singleton.  Quantities that would need history from before the
trace are censored and excluded; censored slots are counted, not truncated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .pmf import Pmf
from .simulator import TraceSet

CENSORED = -1


@numba.njit(cache=True)
def _collision_run(states):
    # states includes the context row; -1 until the first singleton
    out = np.empty(states.shape[0], np.int64)
    prev = -1
    for i in range(states.shape[0]):
        if states[i] == 1:
            prev = 0
        elif prev >= 0:
            prev += 1
        out[i] = prev
    return out


def collision_durations(traces: TraceSet, node: int = 0) -> np.ndarray:
    """Frames since the node's last singleton, for context + measured frames (-1 = censored)."""
    return _collision_run(traces.all_frame_state[:, node])


def collision_duration(traces: TraceSet, node: int, frame: int) -> int | None:
    """Collision duration at measured frame ``frame``; ``None`` when censored."""
    if not 0 <= frame < traces.num_frames:
        raise IndexError(f"frame {frame} outside the measured range")
    c = int(collision_durations(traces, node)[frame + 1])
    return None if c == CENSORED else c


@dataclass(frozen=True, eq=False)
class AoiTrajectory:
    """AoI of one node over the measured horizon."""

    node: int
    frame_size: int
    collision: np.ndarray  # context + measured frames, -1 censored
    slots: np.ndarray  # context + measured frames

    @property
    def num_frames(self) -> int:
        return self.collision.shape[0] - 1

    def aoi(self, t: int) -> int | None:
        m = self.frame_size
        x, pos = divmod(int(t), m)
        if not 0 <= x < self.num_frames:
            raise IndexError(f"slot {t} outside the measured horizon")
        if pos < self.slots[x + 1]:
            c = self.collision[x]
            return None if c == CENSORED else m * int(c) + m + pos
        c = self.collision[x + 1]
        return None if c == CENSORED else m * int(c) + pos

    def values(self) -> np.ndarray:
        """Per-slot AoI over the measured horizon, -1 where censored."""
        m = self.frame_size
        pos = np.arange(m)
        prev = self.collision[:-1, None]
        cur = self.collision[1:, None]
        before = pos[None, :] < self.slots[1:, None]
        out = np.where(before, m * prev + m + pos, m * cur + pos)
        out[before & (prev == CENSORED)] = CENSORED
        out[~before & (cur == CENSORED)] = CENSORED
        return out.reshape(-1)


def aoi_trajectory(traces: TraceSet, node: int = 0) -> AoiTrajectory:
    return AoiTrajectory(node, traces.config.frame_size, collision_durations(traces, node),
                         traces.all_slots[:, node].astype(np.int64))


def aoi_at(traces: TraceSet, node: int, t: int) -> int | None:
    return aoi_trajectory(traces, node).aoi(t)


@dataclass(frozen=True)
class SegmentationReport:
    checked_slots: int
    violations: int
    censored_slots: int
    decomposition_violations: int
    max_collided_reservations: int


@numba.njit(cache=True)
def _segmentation(states, slots, ages, collision, m):
    n = states.shape[0]
    # collided-reservation sum per frame, walked through reservation ends
    seg = np.empty(n, np.int64)
    max_w = 0
    for i in range(n):
        end = i
        total = 0
        w = 0
        ok = True
        while states[end] != 1:
            b = ages[end]
            total += b
            w += 1
            end -= b
            if end < 0:
                ok = False
                break
        if ok:
            seg[i] = total
            if w > max_w:
                max_w = w
        else:
            seg[i] = -1
    decomposition = 0
    for i in range(n):
        if seg[i] >= 0 and collision[i] >= 0 and seg[i] != collision[i]:
            decomposition += 1
    checked = 0
    violations = 0
    censored = 0
    for i in range(1, n):
        d = slots[i]
        for pos in range(m):
            if pos < d:
                c = collision[i - 1]
                s = seg[i - 1]
                lhs = m * c + m + pos
                rhs = pos + m * (1 + s)
            else:
                c = collision[i]
                s = seg[i]
                lhs = m * c + pos
                rhs = pos + m * s
            if c < 0 or s < 0:
                censored += 1
                continue
            checked += 1
            if lhs != rhs:
                violations += 1
    return checked, violations, censored, decomposition, max_w


def verify_segmentation(traces: TraceSet, node: int = 0) -> SegmentationReport:
    """Compare the AoI definition against its reservation-wise decomposition.

    The decomposition walks back from each frame through whole reservations
    (each of length equal to the reservation age at its last frame) until it
    reaches one that ended in a singleton; the AoI must equal the summed
    lengths in slots plus the position, at every uncensored slot.
    """
    states = traces.all_frame_state[:, node].astype(np.int64)
    slots = traces.all_slots[:, node].astype(np.int64)
    ages = traces.reservation_age(node)
    collision = _collision_run(states)
    checked, violations, censored, decomposition, max_w = _segmentation(
        states, slots, ages, collision, traces.config.frame_size)
    return SegmentationReport(int(checked), int(violations), int(censored), int(decomposition),
                              int(max_w))


@numba.njit(cache=True)
def _max_collision(states, nodes):
    best = 0
    for v in nodes:
        prev = -1
        for i in range(states.shape[0]):
            if states[i, v] == 1:
                prev = 0
            elif prev >= 0:
                prev += 1
            if prev > best:
                best = prev
    return best


@numba.njit(cache=True)
def _aoi_counts(states, slots, nodes, m, cmax):
    # diff[c, pos] marks runs of positions whose AoI lies in frame-block c
    diff = np.zeros((cmax + 2, m + 1), np.int64)
    censored = 0
    for v in nodes:
        prev = -1
        if states[0, v] == 1:
            prev = 0
        for i in range(1, states.shape[0]):
            if states[i, v] == 1:
                cur = 0
            elif prev >= 0:
                cur = prev + 1
            else:
                cur = -1
            d = slots[i, v]
            if d > 0:
                if prev >= 0:
                    diff[prev + 1, 0] += 1
                    diff[prev + 1, d] -= 1
                else:
                    censored += d
            if cur >= 0:
                diff[cur, d] += 1
                diff[cur, m] -= 1
            else:
                censored += m - d
            prev = cur
    return diff, censored


@dataclass(frozen=True, eq=False)
class EmpiricalAoi:
    """Empirical AoI law over the measured horizon.

    ``block_probs[c, pos]`` is the probability that the AoI at position ``pos``
    equals ``c * m + pos``, per observed slot at that position.
    """

    frame_size: int
    block_probs: np.ndarray
    averaged: Pmf
    censored_fraction: float
    nodes: tuple
    pooled: bool
    slots_observed: int

    def per_position(self, pos: int) -> Pmf:
        m = self.frame_size
        dense = np.zeros(self.block_probs.shape[0] * m)
        dense[pos::m] = self.block_probs[:, pos]
        return Pmf(0, dense)


def empirical_aoi_pmf(traces: TraceSet, node: int = 0, pool: bool = False) -> EmpiricalAoi:
    """Histogram of the AoI, per position and averaged uniformly over positions.

    With ``pool`` the histogram merges all nodes (they are exchangeable).
    """
    m = traces.config.frame_size
    states = traces.all_frame_state
    slots = traces.all_slots
    nodes = np.arange(traces.config.num_nodes) if pool else np.array([node])
    cmax = int(_max_collision(states, nodes))
    diff, censored = _aoi_counts(states, slots, nodes, m, cmax)
    counts = np.cumsum(diff[:, :m], axis=1)
    per_position_total = traces.num_frames * len(nodes)
    block = counts / per_position_total
    block = block[: int(np.flatnonzero(block.any(axis=1)).max()) + 1] if block.any() else block[:1]
    averaged = Pmf(0, (block / m).reshape(-1))
    total_slots = per_position_total * m
    return EmpiricalAoi(m, block, averaged, censored / total_slots, tuple(int(v) for v in nodes),
                        pool, total_slots)


@dataclass(frozen=True, eq=False)
class ReservationStatistics:
    """Counts over completed reservations, and over the starts that follow them.

    ``start_after`` is indexed ``[ended_in_collision, start_state]``.
    """

    durations: np.ndarray
    start_states: np.ndarray
    start_after: np.ndarray
    num_nodes: int

    @property
    def completed(self) -> int:
        return int(self.durations.sum())

    def duration_pmf(self) -> Pmf:
        return Pmf.from_counts(self.durations[1:], offset=1)

    def start_state_pmf(self) -> Pmf:
        return Pmf.from_counts(self.start_states[1:], offset=1)

    def start_given_previous(self, collided: bool) -> Pmf:
        return Pmf.from_counts(self.start_after[int(collided), 1:], offset=1)

    def merge(self, other: ReservationStatistics) -> ReservationStatistics:
        n = max(len(self.durations), len(other.durations))
        d = np.zeros(n, np.int64)
        d[: len(self.durations)] += self.durations
        d[: len(other.durations)] += other.durations
        return ReservationStatistics(d, self.start_states + other.start_states,
                                     self.start_after + other.start_after, self.num_nodes)


@numba.njit(cache=True)
def _reservation_counts(states, slots, context_age, nodes, V, max_len):
    durations = np.zeros(max_len + 1, np.int64)
    starts = np.zeros(V + 1, np.int64)
    after = np.zeros((2, V + 1), np.int64)
    for v in nodes:
        age = context_age[v]
        for i in range(1, states.shape[0]):
            if slots[i, v] != slots[i - 1, v]:
                durations[age] += 1
                st = states[i, v]
                starts[st] += 1
                after[1 if states[i - 1, v] >= 2 else 0, st] += 1
                age = 1
            else:
                age += 1
    return durations, starts, after


def reservation_statistics(traces: TraceSet, node: int = 0, pool: bool = False) -> ReservationStatistics:
    """Lengths of completed reservations and frame states at reservation starts.

    A reservation counts once its last frame is observed; its length comes
    from the tracked reservation age, so reservations that began before the
    trace are measured exactly.  The in-progress final reservation is left out.
    """
    V = traces.config.num_nodes
    nodes = np.arange(V) if pool else np.array([node])
    max_len = int(traces.context_age.max()) + traces.num_frames + 1
    durations, starts, after = _reservation_counts(
        traces.all_frame_state, traces.all_slots, traces.context_age.astype(np.int64), nodes, V,
        max_len)
    last = np.flatnonzero(durations)
    durations = durations[: int(last.max()) + 1] if last.size else durations[:1]
    return ReservationStatistics(durations, starts, after, V)
