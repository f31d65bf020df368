"""Closed-form approximation of the AoI distribution under SPS.

Pipeline: expected number of empty slots (fixed point) -> frame state at a
reservation start -> probability that a reservation of length ``b`` ends in
a collision -> law of the collision duration (a truncated geometric series of
convolutions) -> AoI per position and averaged over positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular

from .config import AnalyticParams
from .pmf import DomainError, Pmf, binomial_pmf, mean


class FixedPointError(RuntimeError):
    def __init__(self, message, last, residual):
        super().__init__(message)
        self.last = last
        self.residual = residual


@dataclass(frozen=True)
class EmptySlotSolution:
    e_n: float
    iterations: int
    residual: float
    trajectory: tuple


def occupancy_transition_matrix(num_nodes: int, ending_prob: float) -> np.ndarray:
    """Transitions of the number of nodes sharing one occupied slot.

    Row/column ``k - 1`` stands for ``k`` nodes; from ``k`` nodes, ``j`` remain
    with probability Binom(k, 1 - p_E, j).  Lower triangular.
    """
    V = num_nodes
    a = np.zeros((V, V))
    for k in range(1, V + 1):
        a[k - 1, :k] = binomial_pmf(k, 1.0 - ending_prob, np.arange(1, k + 1))
    return a


def expected_empty_slots(num_nodes: int, frame_size: int, ending_prob: float, tol: float = 1e-9,
                         max_iter: int = 500, start: float | None = None,
                         claim_offset: int = 0) -> EmptySlotSolution:
    """Fixed point for the mean number of empty slots per frame.

    Iterates E <- m / (1 + w(E) (I - A)^-1 e), where ``w_k(E)`` is the chance
    that exactly ``k`` movers claim a given empty slot (each node moves with
    p_E and picks it with 1 / (claim_offset + E)) and ``(I - A)^-1 e`` holds
    the expected occupation time of a slot claimed by ``k`` nodes.
    """
    V, m, p = num_nodes, frame_size, ending_prob
    if V >= m:
        raise DomainError("need num_nodes < frame_size")
    if not 0.0 < p <= 1.0:
        raise DomainError(f"ending_prob must lie in (0, 1], got {p}")
    system = np.eye(V) - occupancy_transition_matrix(V, p)
    if np.any(np.abs(np.diag(system)) < 1e-300):
        raise FixedPointError("I - A is singular", start, np.inf)
    lifetimes = solve_triangular(system, np.ones(V), lower=True)
    k = np.arange(1, V + 1)

    x = m / V if start is None else float(start)
    trajectory = [x]
    residual = np.inf
    for it in range(1, max_iter + 1):
        q = min(1.0, p / (claim_offset + x))
        w = binomial_pmf(V, q, k)
        x_new = m / (1.0 + float(w @ lifetimes))
        residual = abs(x_new - x)
        x = x_new
        trajectory.append(x)
        if residual < tol:
            return EmptySlotSolution(x, it, residual, tuple(trajectory))
    raise FixedPointError(f"no convergence after {max_iter} iterations (residual {residual:.3g})",
                          x, residual)


def empty_slot_law(params: AnalyticParams, solution: EmptySlotSolution | None = None):
    """Support values and probabilities of the number of empty slots."""
    if params.empty_slot_model == "fixed_point":
        if solution is None:
            solution = expected_empty_slots(params.num_nodes, params.frame_size, params.ending_prob,
                                            params.fixed_point_tol, params.fixed_point_max_iter,
                                            claim_offset=params.claim_offset)
        return np.array([solution.e_n]), np.array([1.0])
    q = params.empty_slot_pmf
    keep = q.weights > 0
    return q.support[keep].astype(np.float64), q.weights[keep]


def start_state_pmf(params: AnalyticParams, empty_slots=None) -> Pmf:
    """Law of the frame state at the first frame of a reservation (support 1..V).

    ``empty_slots`` is a ``(values, probs)`` pair; by default it is resolved
    from ``params``.
    """
    values, probs = empty_slot_law(params) if empty_slots is None else empty_slots
    V, p = params.num_nodes, params.ending_prob
    if np.any(p / values > 1.0):
        raise DomainError("claim probability p_E / n exceeds 1")
    others = np.arange(V)
    out = np.zeros(V)
    for n, qn in zip(values, probs):
        out += qn * binomial_pmf(V - 1, p / n, others)
    return Pmf(1, out)


def _still_collided_factor(ending_prob: float, b: np.ndarray) -> np.ndarray:
    # probability that one co-located node has left within b - 1 frames
    with np.errstate(divide="ignore", invalid="ignore"):
        if ending_prob == 1.0:
            return np.where(b > 1, 1.0, 0.0)
        return -np.expm1((b - 1) * np.log1p(-ending_prob))


def collision_given_duration(params: AnalyticParams, start: Pmf, b):
    """P(frame state >= 2 | reservation age b), for scalar or array ``b >= 1``."""
    b_arr = np.atleast_1d(np.asarray(b, dtype=np.float64))
    if np.any(b_arr < 1):
        raise DomainError("reservation age must be >= 1")
    left = _still_collided_factor(params.ending_prob, b_arr)
    others = np.arange(len(start)) + start.offset - 1  # co-located nodes at the start
    with np.errstate(divide="ignore", invalid="ignore"):
        log_left = np.log(left)[:, None]
        stay = -np.expm1(others[None, :] * log_left)
    stay = np.where(others[None, :] == 0, 0.0, stay)
    out = np.clip(stay @ start.weights, 0.0, 1.0)
    return float(out[0]) if np.ndim(b) == 0 else out


def reservation_duration_pmf(ending_prob: float, b, form: str = "normalized"):
    """Geometric law of the reservation length on {1, 2, ...}.

    ``form="alternate"`` evaluates p_E (1 - p_E)^b instead, which is deficient
    by a factor (1 - p_E); kept for comparison.
    """
    b_arr = np.asarray(b, dtype=np.float64)
    if np.any(b_arr < 1):
        raise DomainError("reservation length must be >= 1")
    shift = 1.0 if form == "normalized" else 0.0
    if form not in ("normalized", "alternate"):
        raise ValueError(f"unknown form {form!r}")
    out = ending_prob * np.power(1.0 - ending_prob, b_arr - shift)
    return float(out) if out.ndim == 0 else out


def joint_collision_duration(params: AnalyticParams, b, start: Pmf | None = None):
    """P(reservation of length b ends in a collision), for ``1 <= b``."""
    start = start_state_pmf(params) if start is None else start
    return (reservation_duration_pmf(params.ending_prob, b, params.duration_exponent)
            * collision_given_duration(params, start, b))


def collision_duration_pmf(params: AnalyticParams, start: Pmf | None = None) -> Pmf:
    """Approximate law of the collision duration over c = 0 .. w_bar * b_bar.

    Sum over w = 0..w_bar of (collided-reservation law)^{*w}, scaled by the
    probability that a reservation ends in a singleton.  Truncation leaves
    the result deficient; it is not renormalized.
    """
    start = start_state_pmf(params) if start is None else start
    b = np.arange(1, params.b_bar + 1)
    durations = reservation_duration_pmf(params.ending_prob, b, params.duration_exponent)
    collided = durations * collision_given_duration(params, start, b)
    singleton_end = float(np.sum(durations - collided))
    kernel = np.concatenate([[0.0], collided])

    series = np.zeros(params.w_bar * params.b_bar + 1)
    term = np.array([1.0])
    for w in range(params.w_bar + 1):
        series[: len(term)] += term
        if w < params.w_bar:
            term = np.convolve(term, kernel)
    return Pmf(0, np.maximum(singleton_end * series, 0.0))


def truncation_report(params: AnalyticParams, start: Pmf | None = None) -> dict:
    start = start_state_pmf(params) if start is None else start
    b = np.arange(1, params.b_bar + 1)
    durations = reservation_duration_pmf(params.ending_prob, b, params.duration_exponent)
    collided = durations * collision_given_duration(params, start, b)
    r = float(collided.sum())
    s = float(durations.sum()) - r
    tail = max(0.0, 1.0 - float(durations.sum()))
    mass = s * (1.0 - r ** (params.w_bar + 1)) / (1.0 - r) if r < 1 else s * (params.w_bar + 1)
    return {
        "singleton_end_prob": s,
        "collided_end_prob": r,
        "mass": mass,
        "deficit": 1.0 - mass,
        "deficit_bound": r ** (params.w_bar + 1) + tail / (1.0 - r),
    }


def _position_weights(params: AnalyticParams, pos):
    m = params.frame_size
    pos = np.asarray(pos, dtype=np.float64)
    if params.position_weights == "definition":
        # transmission still ahead (pos < slot) vs already made (pos >= slot)
        return (m - 1 - pos) / m, (pos + 1) / m
    return pos / m, (m - pos) / m


def aoi_pmf(params: AnalyticParams, collision: Pmf, pos: int) -> Pmf:
    """AoI law at a fixed position within the frame (support c * m + pos)."""
    m = params.frame_size
    if not 0 <= pos < m:
        raise DomainError(f"position {pos} outside 0..{m - 1}")
    q = collision.padded(0, collision.last + 1)
    q_prev = np.concatenate([[0.0], q[:-1]])
    ahead, done = _position_weights(params, pos)
    dense = np.zeros(len(q) * m)
    dense[pos::m] = ahead * q_prev + done * q
    return Pmf(0, dense)


def aoi_pmf_averaged(params: AnalyticParams, collision: Pmf) -> Pmf:
    """AoI law averaged uniformly over the m positions."""
    m = params.frame_size
    q = collision.padded(0, collision.last + 1)
    q_prev = np.concatenate([[0.0], q[:-1]])
    ahead, done = _position_weights(params, np.arange(m))
    block = (np.outer(q_prev, ahead) + np.outer(q, done)) / m
    return Pmf(0, block.reshape(-1))


@dataclass(frozen=True)
class AoiMetrics:
    mean: float
    violation: float
    theta: int
    mass: float
    renormalized: bool


def aoi_metrics(pmf: Pmf, theta: int) -> AoiMetrics:
    """Average AoI and P(AoI > theta), computed on the pmf scaled to unit mass.

    The tail is summed directly (over the total) rather than taken as one
    minus the cdf, so a bounded support gives an exact zero.
    """
    renorm = abs(pmf.mass - 1.0) > 1e-15
    total = math.fsum(pmf.weights)
    if total <= 0:
        raise DomainError("metrics of a pmf with zero mass")
    start = max(0, int(theta) - pmf.offset + 1)
    violation = min(1.0, math.fsum(pmf.weights[start:]) / total)
    return AoiMetrics(mean(pmf) / total, violation, int(theta), pmf.mass, renorm)


class AnalyticModel:
    """Evaluates the pipeline once per parameter set and caches each stage."""

    def __init__(self, params: AnalyticParams):
        self.params = params

    @cached_property
    def empty_slots(self) -> EmptySlotSolution | None:
        p = self.params
        if p.empty_slot_model != "fixed_point":
            return None
        return expected_empty_slots(p.num_nodes, p.frame_size, p.ending_prob, p.fixed_point_tol,
                                    p.fixed_point_max_iter, claim_offset=p.claim_offset)

    @cached_property
    def start_state(self) -> Pmf:
        return start_state_pmf(self.params, empty_slot_law(self.params, self.empty_slots))

    def collision_probability(self, b):
        return collision_given_duration(self.params, self.start_state, b)

    @cached_property
    def collision_duration(self) -> Pmf:
        return collision_duration_pmf(self.params, self.start_state)

    @cached_property
    def truncation(self) -> dict:
        return truncation_report(self.params, self.start_state)

    def aoi(self, pos: int) -> Pmf:
        return aoi_pmf(self.params, self.collision_duration, pos)

    @cached_property
    def aoi_averaged(self) -> Pmf:
        return aoi_pmf_averaged(self.params, self.collision_duration)

    def metrics(self, theta: int) -> AoiMetrics:
        return aoi_metrics(self.aoi_averaged, theta)


def average_aoi(params: AnalyticParams) -> float:
    return AnalyticModel(params).metrics(0).mean


def violation_probability(params: AnalyticParams, theta: int) -> float:
    return AnalyticModel(params).metrics(theta).violation
