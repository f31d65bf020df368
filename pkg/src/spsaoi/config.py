"""Run parameters shared by the simulator and the analytic engine."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Literal, Union

from .pmf import Pmf


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class GeometricCounter:
    """Reservation ends in each frame with the run's ending probability."""

    model: Literal["geometric"] = "geometric"


@dataclass(frozen=True)
class UniformCounter:
    """Counter drawn uniformly from ``low..high``; on expiry the slot is kept
    with probability ``keep_prob`` (a fresh counter is drawn either way).

    The counter is decremented after every transmission and checked at the
    next frame boundary, so a counter of ``c`` gives ``c`` transmissions.
    """

    low: int = 5
    high: int = 15
    keep_prob: float = 0.0
    model: Literal["uniform"] = "uniform"

    def __post_init__(self):
        if not 1 <= self.low <= self.high:
            raise ConfigError(f"uniform counter needs 1 <= low <= high, got [{self.low}, {self.high}]")
        if not 0.0 <= self.keep_prob < 1.0:
            raise ConfigError(f"keep_prob must lie in [0, 1), got {self.keep_prob}")

    @property
    def effective_ending_prob(self) -> float:
        return (1.0 - self.keep_prob) / ((self.low + self.high) / 2.0)


CounterModel = Union[GeometricCounter, UniformCounter]


def counter_from_mapping(data) -> CounterModel:
    if data is None:
        return GeometricCounter()
    if isinstance(data, (GeometricCounter, UniformCounter)):
        return data
    data = dict(data)
    kind = data.pop("model", "geometric")
    if kind == "geometric":
        if data:
            raise ConfigError(f"unexpected geometric counter fields: {sorted(data)}")
        return GeometricCounter()
    if kind == "uniform":
        return UniformCounter(**data)
    raise ConfigError(f"unknown counter model {kind!r}")


@dataclass(frozen=True)
class SystemConfig:
    num_nodes: int
    frame_size: int
    ending_prob: float
    seed: int = 0
    warmup_frames: int = 50_000
    measured_frames: int = 500_000
    counter: CounterModel = field(default_factory=GeometricCounter)

    def __post_init__(self):
        if int(self.num_nodes) != self.num_nodes or self.num_nodes < 1:
            raise ConfigError(f"num_nodes must be a positive integer, got {self.num_nodes}")
        if int(self.frame_size) != self.frame_size or self.frame_size < 1:
            raise ConfigError(f"frame_size must be a positive integer, got {self.frame_size}")
        if self.num_nodes >= self.frame_size:
            raise ConfigError(
                f"need num_nodes < frame_size, got V={self.num_nodes}, m={self.frame_size}")
        if not 0.0 < self.ending_prob <= 1.0:
            raise ConfigError(f"ending_prob must lie in (0, 1], got {self.ending_prob}")
        if self.warmup_frames < 0:
            raise ConfigError("warmup_frames must be nonnegative")
        if self.measured_frames < 1:
            raise ConfigError("measured_frames must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "counter", counter_from_mapping(self.counter))

    @property
    def load(self) -> float:
        return self.num_nodes / self.frame_size

    def with_(self, **changes) -> SystemConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data) -> SystemConfig:
        data = dict(data)
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown system fields: {sorted(unknown)}")
        return cls(**data)


EmptySlotModel = Literal["fixed_point", "explicit", "empirical"]


@dataclass(frozen=True)
class AnalyticParams:
    """Inputs of the closed-form AoI model.

    ``claim_offset`` selects the per-slot claim probability used by the
    empty-slot fixed point, ``p_E / (claim_offset + E[N])``.  Zero matches the
    simulated reselection rule (a mover picks among exactly the previous
    frame's empty slots); one gives the alternate claim rule.

    ``duration_exponent`` and ``position_weights`` switch between the forms
    derived from the model definitions (defaults) and alternate ones, kept
    for comparison runs.
    """

    num_nodes: int
    frame_size: int
    ending_prob: float
    w_bar: int = 50
    b_bar: int = 1000
    empty_slot_model: EmptySlotModel = "fixed_point"
    empty_slot_pmf: Pmf | None = None
    claim_offset: int = 0
    duration_exponent: Literal["normalized", "alternate"] = "normalized"
    position_weights: Literal["definition", "alternate"] = "definition"
    fixed_point_tol: float = 1e-9
    fixed_point_max_iter: int = 500

    def __post_init__(self):
        if self.num_nodes < 1 or self.frame_size < 1 or self.num_nodes >= self.frame_size:
            raise ConfigError("need 1 <= num_nodes < frame_size")
        if not 0.0 < self.ending_prob <= 1.0:
            raise ConfigError(f"ending_prob must lie in (0, 1], got {self.ending_prob}")
        if self.w_bar < 1 or self.b_bar < 1:
            raise ConfigError("w_bar and b_bar must be >= 1")
        if self.empty_slot_model not in ("fixed_point", "explicit", "empirical"):
            raise ConfigError(f"unknown empty_slot_model {self.empty_slot_model!r}")
        if self.empty_slot_model == "fixed_point":
            if self.empty_slot_pmf is not None:
                raise ConfigError("fixed_point model takes no empty_slot_pmf")
        else:
            q = self.empty_slot_pmf
            if q is None:
                raise ConfigError(f"{self.empty_slot_model} model needs empty_slot_pmf")
            q = q.trim()
            if len(q) == 0 or q.offset < 1 or q.last > self.frame_size:
                raise ConfigError("empty-slot pmf support must lie within 1..frame_size")
            if abs(q.mass - 1.0) > 1e-9:
                raise ConfigError(f"empty-slot pmf mass must be 1, got {q.mass}")
            object.__setattr__(self, "empty_slot_pmf", q)
        if self.claim_offset not in (0, 1):
            raise ConfigError("claim_offset must be 0 or 1")
        if self.duration_exponent not in ("normalized", "alternate"):
            raise ConfigError(f"unknown duration_exponent {self.duration_exponent!r}")
        if self.position_weights not in ("definition", "alternate"):
            raise ConfigError(f"unknown position_weights {self.position_weights!r}")

    @classmethod
    def for_system(cls, system: SystemConfig, **kwargs) -> AnalyticParams:
        return cls(system.num_nodes, system.frame_size, system.ending_prob, **kwargs)

    def with_(self, **changes) -> AnalyticParams:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if self.empty_slot_pmf is not None:
            d["empty_slot_pmf"] = self.empty_slot_pmf.to_dict()
        return d


def p_e_from_3gpp(p_rc: float, p_keep: float) -> float:
    """Per-frame ending probability from the reservation-counter and keep probabilities."""
    for name, val in (("p_rc", p_rc), ("p_keep", p_keep)):
        if not 0.0 <= val < 1.0:
            raise ConfigError(f"{name} must lie in [0, 1), got {val}")
    return (1.0 - p_rc) * (1.0 - p_keep)
