"""Finite probability mass functions on contiguous integer supports.

Deficient pmfs (total mass below one) are legal and carry their mass along;
nothing in this module renormalizes implicitly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

MASS_SLACK = 1e-9


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


@dataclass(frozen=True, eq=False)
class Pmf:
    """Nonnegative weights over the integers ``offset, offset + 1, ...``."""

    offset: int
    weights: np.ndarray
    mass: float = field(init=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise DomainError("pmf weights must be finite")
        if np.any(w < 0):
            raise DomainError(f"pmf weights must be nonnegative (min {w.min():.3g})")
        w.setflags(write=False)
        mass = float(w.sum())
        if mass > 1.0 + MASS_SLACK:
            raise DomainError(f"pmf mass {mass!r} exceeds 1")
        object.__setattr__(self, "offset", int(self.offset))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def delta(cls, at: int) -> Pmf:
        return cls(at, [1.0])

    @classmethod
    def uniform(cls, lo: int, hi: int) -> Pmf:
        """Uniform over ``lo..hi`` inclusive."""
        if hi < lo:
            raise DomainError("uniform pmf needs lo <= hi")
        n = hi - lo + 1
        return cls(lo, np.full(n, 1.0 / n))

    @classmethod
    def from_counts(cls, counts, offset: int = 0, total: float | None = None) -> Pmf:
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum() if total is None else total
        if total <= 0:
            raise DomainError("cannot build a pmf from zero counts")
        return cls(offset, counts / total)

    @classmethod
    def from_samples(cls, samples) -> Pmf:
        samples = np.asarray(samples, dtype=np.int64)
        if samples.size == 0:
            raise DomainError("no samples")
        lo = int(samples.min())
        return cls.from_counts(np.bincount(samples - lo), offset=lo)

    def __len__(self):
        return len(self.weights)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + len(self.weights))

    @property
    def last(self) -> int:
        return self.offset + len(self.weights) - 1

    def prob(self, x):
        """Probability at ``x`` (scalar or array); zero off the stored range."""
        x = np.asarray(x, dtype=np.int64)
        idx = np.atleast_1d(x - self.offset)
        out = np.zeros(idx.shape)
        inside = (idx >= 0) & (idx < len(self.weights))
        out[inside] = self.weights[idx[inside]]
        return float(out[0]) if x.ndim == 0 else out

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.weights)

    def trim(self) -> Pmf:
        nz = np.flatnonzero(self.weights)
        if nz.size == 0:
            return Pmf(self.offset, [])
        return Pmf(self.offset + int(nz[0]), self.weights[nz[0]:nz[-1] + 1])

    def normalized(self) -> Pmf:
        if self.mass <= 0:
            raise DomainError("cannot normalize a pmf with zero mass")
        return Pmf(self.offset, self.weights / self.mass)

    def padded(self, lo: int, hi: int) -> np.ndarray:
        """Dense weights over ``lo..hi`` inclusive (zero-filled)."""
        out = np.zeros(hi - lo + 1)
        a = max(lo, self.offset)
        b = min(hi, self.last)
        if b >= a:
            out[a - lo:b - lo + 1] = self.weights[a - self.offset:b - self.offset + 1]
        return out

    def to_dict(self) -> dict:
        return {"offset": self.offset, "weights": self.weights.tolist(), "mass": self.mass}

    @classmethod
    def from_dict(cls, data: dict) -> Pmf:
        pmf = cls(int(data["offset"]), data["weights"])
        if "mass" in data and abs(pmf.mass - float(data["mass"])) > 1e-12:
            raise DomainError("stored mass does not match the weights")
        return pmf

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> Pmf:
        return cls.from_dict(json.loads(text))

    def write_csv(self, path, header=("value", "probability")):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for x, p in zip(self.support.tolist(), self.weights.tolist()):
                writer.writerow([x, format_real(p)])

    @classmethod
    def read_csv(cls, path) -> Pmf:
        values, probs = [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                values.append(int(row[0]))
                probs.append(float(row[1]))
        if not values:
            return cls(0, [])
        lo = min(values)
        dense = np.zeros(max(values) - lo + 1)
        dense[np.asarray(values) - lo] = probs
        return cls(lo, dense)

    def __repr__(self):
        return f"Pmf(offset={self.offset}, len={len(self)}, mass={self.mass:.12g})"


def format_real(x: float) -> str:
    return format(float(x), ".17g")


def binomial_pmf(n: int, p: float, k):
    """C(n, k) p^k (1 - p)^(n - k), evaluated in log space.

    ``k`` may be an integer or an integer array.
    """
    if n < 0:
        raise DomainError("n must be nonnegative")
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p={p} outside [0, 1]")
    k_arr = np.asarray(k)
    if np.any(k_arr < 0) or np.any(k_arr > n):
        raise DomainError("k must lie in 0..n")
    k_arr = k_arr.astype(np.float64)
    log_c = gammaln(n + 1.0) - gammaln(k_arr + 1.0) - gammaln(n - k_arr + 1.0)
    out = np.exp(log_c + xlogy(k_arr, p) + xlog1py(n - k_arr, -p))
    return float(out) if out.ndim == 0 else out


def convolve(a: Pmf, b: Pmf) -> Pmf:
    if len(a) == 0 or len(b) == 0:
        return Pmf(a.offset + b.offset, [])
    w = np.convolve(a.weights, b.weights)
    # round-off can push a product of masses just above 1
    return Pmf(a.offset + b.offset, np.maximum(w, 0.0))


def convolve_power(p: Pmf, w: int) -> Pmf:
    """``p`` convolved with itself ``w`` times; ``w = 0`` gives delta(0)."""
    if w < 0:
        raise DomainError("convolution power must be nonnegative")
    result = Pmf.delta(0)
    base = p
    while w:
        if w & 1:
            result = convolve(result, base)
        w >>= 1
        if w:
            base = convolve(base, base)
    return result


def total_variation(p: Pmf, q: Pmf) -> float:
    """Half the L1 distance; points missing from either support count as zero."""
    if len(p) == 0 and len(q) == 0:
        return 0.0
    lo = min(x.offset for x in (p, q) if len(x))
    hi = max(x.last for x in (p, q) if len(x))
    return 0.5 * float(np.abs(p.padded(lo, hi) - q.padded(lo, hi)).sum())


def max_cdf_gap(p: Pmf, q: Pmf) -> float:
    """Largest absolute difference between the two cumulative sums."""
    lo = min(p.offset, q.offset)
    hi = max(p.last, q.last)
    return float(np.abs(np.cumsum(p.padded(lo, hi)) - np.cumsum(q.padded(lo, hi))).max())


def mean(p: Pmf) -> float:
    if len(p) == 0 or p.mass <= 0:
        raise DomainError("mean of an empty pmf")
    return float(np.dot(p.support.astype(np.float64), p.weights))


def tail_above(p: Pmf, theta: int) -> float:
    """1 - P(X <= theta), clamped to [0, 1]; missing mass counts as tail."""
    if len(p) == 0 or theta < p.offset:
        below = 0.0
    else:
        below = math.fsum(p.weights[: min(theta - p.offset + 1, len(p))])
    return min(1.0, max(0.0, 1.0 - below))


def write_columns(path, header, columns):
    """Write equally long columns as CSV (LF endings, reals at 17 significant digits)."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([format_real(v) if isinstance(v, (float, np.floating)) else v
                             for v in row])
    return path
