"""Assumption checks and exact oracles for small instances.

The exact oracles enumerate the occupancy chain over all slot vectors in
{0..m-1}^V, so they only apply to desk-scale configurations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .aoi import ReservationStatistics, reservation_statistics
from .analytic import EmptySlotSolution, expected_empty_slots
from .config import ConfigError, SystemConfig, UniformCounter
from .pmf import Pmf, total_variation
from .simulator import TraceSet, run_simulation

MIN_PAIRS = 10_000
STATE_LIMIT = 100_000
EXTENDED_LIMIT = 1_000_000


@dataclass(frozen=True)
class ConditionalStatePmfs:
    """Frame state at reservation starts, overall and split by how the previous reservation ended."""

    marginal: Pmf
    given_prev_collision: Pmf | None
    given_prev_singleton: Pmf | None
    count_marginal: int
    count_collision: int
    count_singleton: int

    @classmethod
    def from_statistics(cls, stats: ReservationStatistics) -> ConditionalStatePmfs:
        after = stats.start_after
        n_col, n_sin = int(after[1].sum()), int(after[0].sum())
        return cls(
            stats.start_state_pmf(),
            stats.start_given_previous(True) if n_col else None,
            stats.start_given_previous(False) if n_sin else None,
            int(stats.start_states.sum()), n_col, n_sin,
        )


@dataclass(frozen=True)
class AssumptionDistance:
    d_collision: float
    d_singleton: float
    count_collision: int
    count_singleton: int
    low_confidence: bool


def assumption_distance(source, node: int = 0, pool: bool = True,
                        min_pairs: int = MIN_PAIRS) -> AssumptionDistance:
    """TV between the start-state law given the previous reservation's ending and its marginal.

    ``source`` is a TraceSet or ReservationStatistics (e.g. merged replications).
    A side with no samples reports distance 0 and sets the low-confidence flag.
    """
    stats = source if isinstance(source, ReservationStatistics) else reservation_statistics(
        source, node, pool)
    cond = ConditionalStatePmfs.from_statistics(stats)
    d_col = total_variation(cond.given_prev_collision, cond.marginal) if cond.given_prev_collision else 0.0
    d_sin = total_variation(cond.given_prev_singleton, cond.marginal) if cond.given_prev_singleton else 0.0
    low = min(cond.count_collision, cond.count_singleton) < min_pairs
    return AssumptionDistance(d_col, d_sin, cond.count_collision, cond.count_singleton, low)


def study_nodes(frame_size: int, load: float) -> int:
    return int(round(load * frame_size))


def assumption_study(frame_sizes, load: float, ending_prob: float, replications: int = 1,
                     seed: int = 0, warmup_frames: int = 50_000, measured_frames: int = 500_000):
    """Assumption distances over frame sizes at a fixed load, pooling nodes and replications.

    Returns a list of ``(m, V, AssumptionDistance)``.  Replication ``r`` of
    frame size ``m`` uses seed ``seed + r``.
    """
    rows = []
    for m in frame_sizes:
        V = study_nodes(m, load)
        stats = None
        for r in range(replications):
            cfg = SystemConfig(V, m, ending_prob, seed=seed + r, warmup_frames=warmup_frames,
                               measured_frames=measured_frames)
            s = reservation_statistics(run_simulation(cfg), pool=True)
            stats = s if stats is None else stats.merge(s)
        rows.append((m, V, assumption_distance(stats)))
    return rows


@dataclass(frozen=True)
class EmptySlotReport:
    empirical: Pmf
    mean: float
    solution: EmptySlotSolution
    tv_from_point_mass: float
    frame_size: int

    @property
    def relative_gap(self) -> float:
        """|E[N] - empirical mean| / m."""
        return abs(self.solution.e_n - self.mean) / self.frame_size


def empty_slot_report(traces: TraceSet, solution: EmptySlotSolution | None = None,
                      claim_offset: int = 0) -> EmptySlotReport:
    """Empirical law of the number of empty slots against the fixed-point mean.

    The point mass sits at the integer nearest to E[N].
    """
    cfg = traces.config
    if solution is None:
        solution = expected_empty_slots(cfg.num_nodes, cfg.frame_size, cfg.ending_prob,
                                        claim_offset=claim_offset)
    empirical = Pmf.from_samples(traces.empty_count)
    tv = total_variation(empirical, Pmf.delta(int(round(solution.e_n))))
    return EmptySlotReport(empirical, float(np.mean(traces.empty_count)), solution, tv, cfg.frame_size)


@dataclass(frozen=True, eq=False)
class StationaryChain:
    """Exact occupancy chain. State code = sum over nodes of slot * m**node."""

    config: SystemConfig
    states: np.ndarray  # (S, V) slot vectors
    transition: sparse.csr_matrix
    pi: np.ndarray
    iterations: int
    residual: float

    @property
    def slot_marginal(self) -> Pmf:
        m = self.config.frame_size
        return Pmf(0, np.bincount(self.states[:, 0], weights=self.pi, minlength=m))

    def frame_state(self, node: int = 0) -> np.ndarray:
        own = self.states[:, [node]]
        return (self.states == own).sum(axis=1)


def _enumerate_states(V: int, m: int) -> np.ndarray:
    codes = np.arange(m ** V)
    return np.stack([(codes // m ** v) % m for v in range(V)], axis=1)


def transition_matrix(config: SystemConfig, states: np.ndarray | None = None) -> sparse.csr_matrix:
    """Exact one-frame transition matrix of the occupancy vector.

    Node moves factorize: keep with 1 - p_E, or move with p_E / N to each slot
    empty in the old frame.  Any other target has probability zero.
    """
    if isinstance(config.counter, UniformCounter):
        raise ConfigError("the exact chain covers the geometric counter only")
    V, m, p = config.num_nodes, config.frame_size, config.ending_prob
    states = _enumerate_states(V, m) if states is None else states
    weights_place = m ** np.arange(V)
    rows, cols, vals = [], [], []
    for code, slots in enumerate(states):
        empties = np.setdiff1d(np.arange(m), slots)
        targets = np.array([0])
        probs = np.array([1.0])
        for v in range(V):
            options = np.concatenate([[slots[v]], empties])
            chance = np.concatenate([[1.0 - p], np.full(len(empties), p / len(empties))])
            targets = (targets[:, None] + options[None, :] * weights_place[v]).reshape(-1)
            probs = (probs[:, None] * chance[None, :]).reshape(-1)
        keep = probs > 0
        rows.append(np.full(int(keep.sum()), code))
        cols.append(targets[keep])
        vals.append(probs[keep])
    S = m ** V
    t = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(S, S))
    return t.tocsr()


def brute_force_stationary(config: SystemConfig, tol: float = 1e-12,
                           max_iter: int = 1_000_000) -> StationaryChain:
    """Stationary law of the occupancy chain by power iteration."""
    V, m = config.num_nodes, config.frame_size
    if m ** V > STATE_LIMIT:
        raise ConfigError(f"state space m^V = {m ** V} exceeds {STATE_LIMIT}")
    states = _enumerate_states(V, m)
    t = transition_matrix(config, states)
    tt = t.T.tocsr()
    pi = np.full(len(states), 1.0 / len(states))
    residual = np.inf
    for it in range(1, max_iter + 1):
        nxt = tt @ pi
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - pi).max())
        pi = nxt
        if residual < tol:
            return StationaryChain(config, states, t, pi, it, residual)
    raise RuntimeError(f"power iteration did not reach {tol} (residual {residual:.3g})")


def default_cap(ending_prob: float) -> int:
    return 100 * math.ceil(1.0 / ending_prob)


@dataclass(frozen=True, eq=False)
class ExactAoi:
    collision: Pmf  # C(x) over 0..cap-1
    averaged: Pmf  # position-averaged AoI
    deficit: float  # stationary mass with C(x) >= cap
    cap: int


def _collision_layers(chain: StationaryChain, cap: int) -> np.ndarray:
    """Joint stationary law J[c, s] = P(C(x) = c, state s), c < cap."""
    singleton = chain.frame_state(0) == 1
    tt = chain.transition.T.tocsr()
    layers = np.zeros((cap, len(chain.pi)))
    layers[0] = np.where(singleton, chain.pi, 0.0)
    for c in range(1, cap):
        layers[c] = np.where(singleton, 0.0, tt @ layers[c - 1])
    return layers


def exact_aoi_small(config: SystemConfig, cap: int | None = None,
                    chain: StationaryChain | None = None) -> ExactAoi:
    """Exact stationary law of the collision duration and of the averaged AoI for node 0.

    The AoI maps through the two cases of its definition: positions ahead of
    the node's slot use C of the previous frame, the rest use C of the
    current frame; each position has weight 1/m.
    """
    V, m = config.num_nodes, config.frame_size
    cap = default_cap(config.ending_prob) if cap is None else int(cap)
    if m ** V * cap > EXTENDED_LIMIT:
        raise ConfigError(f"extended chain size m^V * cap = {m ** V * cap} exceeds {EXTENDED_LIMIT}")
    chain = brute_force_stationary(config) if chain is None else chain
    layers = _collision_layers(chain, cap)
    deficit = max(0.0, 1.0 - float(layers.sum()))
    if deficit > 1e-6:
        warnings.warn(f"collision-duration cap {cap} leaves deficit {deficit:.3g}", RuntimeWarning)

    slot = chain.states[:, 0]
    now = np.stack([np.bincount(slot, weights=row, minlength=m) for row in layers])
    moved = (chain.transition.T @ layers.T).T  # P(C(x-1) = c, state at x)
    before = np.stack([np.bincount(slot, weights=row, minlength=m) for row in moved])

    out = np.zeros((cap + 1) * m)
    pos = np.arange(m)
    for d in range(m):
        ahead = pos < d
        for c in range(cap):
            out[m * c + m + pos[ahead]] += before[c, d] / m
            out[m * c + pos[~ahead]] += now[c, d] / m
    return ExactAoi(Pmf(0, layers.sum(axis=1)), Pmf(0, np.maximum(out, 0.0)), deficit, cap)


def exact_collision_joint(config: SystemConfig, b_max: int,
                          chain: StationaryChain | None = None) -> np.ndarray:
    """Exact P(frame state >= 2, reservation age = b) for node 0, b = 1..b_max."""
    chain = brute_force_stationary(config) if chain is None else chain
    stay_mask = chain.states[:, 0]
    t = chain.transition.tocoo()
    same = stay_mask[t.row] == stay_mask[t.col]
    stay = sparse.csr_matrix((t.data[same], (t.row[same], t.col[same])), shape=t.shape)
    move = sparse.csr_matrix((t.data[~same], (t.row[~same], t.col[~same])), shape=t.shape)
    collided = chain.frame_state(0) >= 2
    layer = move.T @ chain.pi
    out = np.zeros(b_max)
    for b in range(b_max):
        out[b] = layer[collided].sum()
        layer = stay.T @ layer
    return out


def exact_empty_slot_pmf(chain: StationaryChain) -> Pmf:
    m = chain.config.frame_size
    occupied = np.array([len(np.unique(s)) for s in chain.states])
    return Pmf(0, np.bincount(m - occupied, weights=chain.pi, minlength=m + 1))
