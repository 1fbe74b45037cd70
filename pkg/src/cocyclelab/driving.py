"""Ergodic driving flows: torus translations and suspensions over rotations.

Two flow families drive every cocycle in this package. The first is the
linear translation flow on the 2-torus with direction (1, slope). The second
is a suspension (special flow) over an irrational circle rotation with a
two-valued roof: height0 + 1 on [0, cut) and height0 + skew on [cut, 1).
Suspension states live on the castle {(x, r): 0 <= r < roof(x)} with the top
of each column glued to the rotated base point.

Iterated castle stepping keeps Neumaier-style carries on both the base
coordinate and the fiber accumulator, so orbit error stays at final-rounding
level instead of growing with the number of roof crossings.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "TorusFlow",
    "SuspensionFlow",
    "TorusPoint",
    "CastlePoint",
    "IntervalUnion",
    "evolve",
    "sample_invariant",
    "roof",
    "locate_in_flowbox",
    "wrap1",
]

#: largest denominator probed when rejecting rational flow parameters
_DENOMINATOR_LIMIT = 10**6
_RATIONAL_TOL = 1e-14


def _require_irrational(value: float, name: str) -> None:
    approx = Fraction(value).limit_denominator(_DENOMINATOR_LIMIT)
    if abs(value - float(approx)) < _RATIONAL_TOL:
        raise ValueError(
            f"{name}={value!r} is rational with denominator <= {_DENOMINATOR_LIMIT}; "
            "the flow would not be uniquely ergodic"
        )


def wrap1(x: float) -> float:
    """Reduce to [0, 1). Exact for inputs in (-1, 2)."""
    if 0.0 <= x < 1.0:
        return x
    x = math.fmod(x, 1.0)
    return x + 1.0 if x < 0.0 else x


@dataclass(frozen=True)
class TorusPoint:
    x: float
    y: float


@dataclass(frozen=True)
class CastlePoint:
    base: float
    fiber: float


@dataclass(frozen=True)
class TorusFlow:
    """Translation flow on the 2-torus with direction (1, slope)."""

    slope: float

    def __post_init__(self) -> None:
        _require_irrational(self.slope, "slope")

    def evolve(self, state: TorusPoint, t: float) -> TorusPoint:
        # reduce t exactly first so the additive error stays O(ulp(1))
        tm = math.fmod(t, 1.0)
        x = wrap1(state.x + tm)
        y = wrap1(math.fmod(state.y + math.fmod(self.slope * t, 1.0), 1.0) + 1.0)
        return TorusPoint(x, y)

    def sample(self, seed: int, n: int) -> list[TorusPoint]:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        xs = rng.random(n)
        ys = rng.random(n)
        return [TorusPoint(float(a), float(b)) for a, b in zip(xs, ys)]


class _Carry:
    """Running value plus Neumaier compensation term."""

    __slots__ = ("value", "comp")

    def __init__(self, value: float):
        self.value = value
        self.comp = 0.0

    def add(self, delta: float) -> None:
        s = self.value + delta
        if abs(self.value) >= abs(delta):
            self.comp += (self.value - s) + delta
        else:
            self.comp += (delta - s) + self.value
        self.value = s

    def shift_exact(self, delta: float) -> None:
        # caller guarantees the subtraction is exact (integer shift of a
        # value in a known binade), no compensation update needed
        self.value += delta

    def fold(self) -> float:
        return self.value + self.comp


@dataclass(frozen=True)
class SuspensionFlow:
    """Suspension over x -> x + rotation (mod 1) with a two-valued roof.

    roof(x) = height0 + 1 for x in [0, cut), height0 + skew otherwise.
    The invariant probability measure is (Lebesgue x Lebesgue) / mean_roof.
    """

    rotation: float
    height0: int
    skew: float
    cut: float

    def __post_init__(self) -> None:
        _require_irrational(self.rotation, "rotation")
        _require_irrational(self.skew, "skew")
        if self.height0 < 1 or self.height0 != int(self.height0):
            raise ValueError("height0 must be a positive integer")
        if not 1.0 < self.skew:
            raise ValueError("skew must exceed 1")
        if not 0.0 < self.cut < 1.0:
            raise ValueError("cut must lie in (0, 1)")

    # roof levels
    @property
    def roof_low(self) -> float:
        return float(self.height0 + 1)

    @property
    def roof_high(self) -> float:
        return self.height0 + self.skew

    def roof(self, x: float) -> float:
        return self.roof_low if x < self.cut else self.roof_high

    def mean_roof(self) -> float:
        """Base-average of the roof, the normalizing constant of the measure."""
        return self.cut * self.roof_low + (1.0 - self.cut) * self.roof_high

    def rotate(self, x: float, steps: int = 1) -> float:
        return wrap1(math.fmod(x + steps * self.rotation, 1.0) + 1.0)

    def evolve(self, state: CastlePoint, t: float) -> CastlePoint:
        if not 0.0 <= state.fiber < self.roof(state.base):
            raise ValueError("state lies outside the castle")
        base = _Carry(state.base)
        total = _Carry(state.fiber)
        total.add(t)
        rot = self.rotation

        def folded() -> float:
            x = base.fold()
            if x >= 1.0:
                return x - 1.0
            if x < 0.0:
                return x + 1.0
            return x

        while True:
            x = folded()
            h = self.roof(x)
            r = total.fold()
            if r >= h:
                total.add(-h)
                base.add(rot)
                if base.value >= 1.0:
                    base.shift_exact(-1.0)
            elif r < 0.0:
                base.add(-rot)
                if base.value < 0.0:
                    base.shift_exact(1.0)
                total.add(self.roof(folded()))
            else:
                return CastlePoint(x, min(r, math.nextafter(h, 0.0)))

    def crossing_times(self, state: CastlePoint, span: float) -> list[float]:
        """Roof-crossing times in (0, span) along the forward orbit."""
        out: list[float] = []
        t = self.roof(state.base) - state.fiber
        x = state.base
        while t < span:
            if t > 0.0:
                out.append(t)
            x = self.rotate(x)
            t += self.roof(x)
        return out

    def sample(self, seed: int, n: int) -> list[CastlePoint]:
        """Draw i.i.d. states from the normalized invariant measure.

        The base marginal has density roof(x) / mean_roof; conditionally the
        fiber is uniform on [0, roof(x)).
        """
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        mass_low = self.cut * self.roof_low
        p_low = mass_low / self.mean_roof()
        pick = rng.random(n)
        ux = rng.random(n)
        ur = rng.random(n)
        low = pick < p_low
        xs = np.where(low, ux * self.cut, self.cut + ux * (1.0 - self.cut))
        roofs = np.where(low, self.roof_low, self.roof_high)
        rs = ur * roofs
        return [CastlePoint(float(a), float(b)) for a, b in zip(xs, rs)]


DrivingFlow = TorusFlow | SuspensionFlow
DrivingState = TorusPoint | CastlePoint


def evolve(flow: DrivingFlow, state: DrivingState, t: float) -> DrivingState:
    """Move a state time t along the flow (t may be negative)."""
    return flow.evolve(state, t)


def roof(flow: SuspensionFlow, x: float) -> float:
    return flow.roof(x)


def sample_invariant(flow: DrivingFlow, seed: int, n: int) -> list[DrivingState]:
    """Deterministic i.i.d. sample from the invariant probability measure."""
    if n < 0:
        raise ValueError("sample size must be nonnegative")
    return flow.sample(seed, n)


class IntervalUnion:
    """Finite union of disjoint half-open subintervals of [0, 1)."""

    __slots__ = ("intervals", "_los")

    def __init__(self, intervals) -> None:
        ivs = sorted((float(lo), float(hi)) for lo, hi in intervals)
        for lo, hi in ivs:
            if not (0.0 <= lo < hi <= 1.0):
                raise ValueError(f"bad interval [{lo}, {hi})")
        for (_, hi), (lo, _) in zip(ivs, ivs[1:]):
            if lo < hi:
                raise ValueError("intervals overlap")
        self.intervals = tuple(ivs)
        self._los = [lo for lo, _ in ivs]

    def measure(self) -> float:
        return math.fsum(hi - lo for lo, hi in self.intervals)

    def contains(self, x: float) -> bool:
        return self.find(x) is not None

    def find(self, x: float) -> int | None:
        """Index of the interval holding x, or None."""
        i = bisect.bisect_right(self._los, x) - 1
        if i >= 0 and x < self.intervals[i][1]:
            return i
        return None

    def intersects(self, lo: float, hi: float) -> bool:
        for a, b in self.intervals:
            if a < hi and lo < b:
                return True
        return False

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    def __repr__(self) -> str:
        return f"IntervalUnion({list(self.intervals)!r})"


def locate_in_flowbox(
    flow: SuspensionFlow,
    state: CastlePoint,
    cells: IntervalUnion,
    window: tuple[float, float],
) -> CastlePoint | None:
    """Flowbox coordinates of a castle state, or None when outside.

    The flowbox is the set of castle points with base in `cells` and fiber in
    [a, b); the returned point carries the fiber offset from a. The window
    must sit strictly below the lowest roof so that the box never straddles
    the gluing.
    """
    a, b = window
    if not (0.0 <= a < b < flow.roof_low):
        raise ValueError("flowbox window must satisfy 0 <= a < b < height0 + 1")
    if a <= state.fiber < b and cells.contains(state.base):
        return CastlePoint(state.base, state.fiber - a)
    return None
