"""Coefficient fields and matrix generators over a driving flow.

A kinetic generator is the companion matrix [[0, 1], [-restoring, -damping]]
of the oscillator x'' + damping * x' + restoring * x = 0, with both
coefficients measurable functions of the driving state. Three field families
are supported: constants (either flow), trigonometric polynomials (torus,
evaluated on the torus position), and step functions (suspension, evaluated
on the base coordinate and constant along the fiber).

The module also provides the integral metrics between generators: the L^p
deviation of the matrix difference under the invariant measure, and its
bounded companion x / (1 + x) which is the distance the perturbation budget
arguments are phrased in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .driving import (
    CastlePoint,
    DrivingFlow,
    DrivingState,
    SuspensionFlow,
    TorusFlow,
    TorusPoint,
)
from .mat2 import spectral_norm, spectral_norms

__all__ = [
    "ConstantField",
    "TrigField",
    "StepField",
    "KineticGenerator",
    "GeneralGenerator",
    "evaluate",
    "invariant_mean",
    "DistanceEstimate",
    "lp_distance",
    "bounded_lp_distance",
    "l1_norm",
    "ConstProgram",
    "ConstMatrixProgram",
    "TrigProgram",
    "PcwProgram",
]

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# coefficient fields


@dataclass(frozen=True)
class ConstantField:
    value: float

    def at(self, state: DrivingState) -> float:
        return self.value

    def values(self, states) -> np.ndarray:
        return np.full(len(states), self.value)

    def bound(self) -> float:
        return abs(self.value)

    def mean_lebesgue(self) -> float:
        return self.value


@dataclass(frozen=True)
class TrigField:
    """Real trigonometric polynomial on the 2-torus.

    terms maps integer frequency pairs (k1, k2) to (cos_coef, sin_coef);
    the value at (x, y) is sum of cos_coef*cos(2 pi k.p) + sin_coef*sin(...).
    """

    terms: tuple[tuple[int, int, float, float], ...]

    @classmethod
    def build(cls, terms) -> "TrigField":
        packed = tuple(
            (int(k1), int(k2), float(cc), float(sc)) for (k1, k2, cc, sc) in terms
        )
        return cls(packed)

    def at(self, state: TorusPoint) -> float:
        total = 0.0
        for k1, k2, cc, sc in self.terms:
            ph = TWO_PI * (k1 * state.x + k2 * state.y)
            total += cc * math.cos(ph) + sc * math.sin(ph)
        return total

    def values(self, states) -> np.ndarray:
        xs = np.array([s.x for s in states])
        ys = np.array([s.y for s in states])
        out = np.zeros(len(xs))
        for k1, k2, cc, sc in self.terms:
            ph = TWO_PI * (k1 * xs + k2 * ys)
            out += cc * np.cos(ph) + sc * np.sin(ph)
        return out

    def bound(self) -> float:
        return math.fsum(abs(cc) + abs(sc) for _, _, cc, sc in self.terms)

    def mean_lebesgue(self) -> float:
        for k1, k2, cc, _ in self.terms:
            if k1 == 0 and k2 == 0:
                return cc
        return 0.0


@dataclass(frozen=True)
class StepField:
    """Piecewise-constant field on the suspension base, constant in fiber.

    cells is a tuple of (lo, hi, value) half-open intervals that must tile
    [0, 1) exactly.
    """

    cells: tuple[tuple[float, float, float], ...]

    @classmethod
    def build(cls, cells) -> "StepField":
        packed = tuple(sorted((float(lo), float(hi), float(v)) for lo, hi, v in cells))
        if not packed or packed[0][0] != 0.0 or packed[-1][1] != 1.0:
            raise ValueError("step cells must tile [0, 1)")
        for (_, hi, _), (lo, _, _) in zip(packed, packed[1:]):
            if lo != hi:
                raise ValueError("step cells must tile [0, 1) without gaps")
        return cls(packed)

    def at(self, state: CastlePoint) -> float:
        return self.value_at_base(state.base)

    def value_at_base(self, x: float) -> float:
        for lo, hi, v in self.cells:
            if lo <= x < hi:
                return v
        raise ValueError(f"base coordinate {x} outside [0, 1)")

    def values(self, states) -> np.ndarray:
        xs = np.array([s.base for s in states])
        los = np.array([lo for lo, _, _ in self.cells])
        vals = np.array([v for _, _, v in self.cells])
        idx = np.searchsorted(los, xs, side="right") - 1
        return vals[idx]

    def bound(self) -> float:
        return max(abs(v) for _, _, v in self.cells)

    def mean_lebesgue(self) -> float:
        return math.fsum(v * (hi - lo) for lo, hi, v in self.cells)

    def cell_of(self, x: float) -> tuple[float, float, float]:
        for lo, hi, v in self.cells:
            if lo <= x < hi:
                return (lo, hi, v)
        raise ValueError(f"base coordinate {x} outside [0, 1)")


CoefficientField = ConstantField | TrigField | StepField


def _check_field(flow: DrivingFlow, f, name: str) -> None:
    if isinstance(f, TrigField) and not isinstance(flow, TorusFlow):
        raise TypeError(f"{name}: trigonometric fields require a torus flow")
    if isinstance(f, StepField) and not isinstance(flow, SuspensionFlow):
        raise TypeError(f"{name}: step fields require a suspension flow")


def invariant_mean(f, flow: DrivingFlow) -> float:
    """Exact mean of a field under the invariant probability measure."""
    if isinstance(f, ConstantField):
        return f.value
    if isinstance(f, TrigField):
        # off-zero frequencies integrate to zero against Lebesgue
        return f.mean_lebesgue()
    if isinstance(f, StepField):
        assert isinstance(flow, SuspensionFlow)
        acc = []
        for lo, hi, v in f.cells:
            low_part = max(0.0, min(hi, flow.cut) - lo)
            high_part = max(0.0, hi - max(lo, flow.cut))
            acc.append(v * (low_part * flow.roof_low + high_part * flow.roof_high))
        return math.fsum(acc) / flow.mean_roof()
    raise TypeError(f"no exact mean for field {type(f).__name__}")


# ---------------------------------------------------------------------------
# orbit coefficient programs
#
# The propagator integrates along a single orbit, where a field reduces to a
# function of time only. Programs describe that reduction: a constant pair,
# a trigonometric polynomial in t, or a piecewise-constant schedule with
# precomputed discontinuity times.


@dataclass(frozen=True)
class ConstProgram:
    span: float
    sign: float
    damping: float
    restoring: float


@dataclass(frozen=True)
class ConstMatrixProgram:
    """Constant but not kinetic-form coefficients; m is a 2x2 array."""

    span: float
    sign: float
    m: np.ndarray


@dataclass(frozen=True)
class TrigProgram:
    span: float
    sign: float
    # per-term arrays: value(s) = sum cc*cos(2 pi (ph + nu s)) + sc*sin(...)
    d_cc: np.ndarray
    d_sc: np.ndarray
    d_nu: np.ndarray
    d_ph: np.ndarray
    r_cc: np.ndarray
    r_sc: np.ndarray
    r_nu: np.ndarray
    r_ph: np.ndarray


@dataclass(frozen=True)
class PcwProgram:
    span: float
    sign: float
    # times has one more entry than the value arrays and brackets [0, span]
    times: np.ndarray
    damping: np.ndarray
    restoring: np.ndarray


def _trig_program_field(f, state: TorusPoint, slope: float, direction: float):
    if isinstance(f, ConstantField):
        return (
            np.array([f.value]),
            np.array([0.0]),
            np.array([0.0]),
            np.array([0.0]),
        )
    cc = np.array([t[2] for t in f.terms])
    sc = np.array([t[3] for t in f.terms])
    nu = np.array([direction * (t[0] + t[1] * slope) for t in f.terms])
    ph = np.array([t[0] * state.x + t[1] * state.y for t in f.terms])
    return cc, sc, nu, ph


def _pcw_values_forward(flow: SuspensionFlow, state: CastlePoint, span: float):
    """Breakpoints and per-segment base points along [0, span]."""
    times = [0.0]
    bases = [state.base]
    t = flow.roof(state.base) - state.fiber
    x = state.base
    while t < span:
        x = flow.rotate(x)
        times.append(t)
        bases.append(x)
        t += flow.roof(x)
    times.append(span)
    return times, bases


def _pcw_values_backward(flow: SuspensionFlow, state: CastlePoint, span: float):
    """Same but walking the orbit backwards; s measures elapsed reverse time."""
    times = [0.0]
    bases = [state.base]
    t = state.fiber
    x = state.base
    while t < span:
        x = flow.rotate(x, -1)
        times.append(t)
        bases.append(x)
        t += flow.roof(x)
    times.append(span)
    return times, bases


# ---------------------------------------------------------------------------
# generators


@dataclass(frozen=True)
class KineticGenerator:
    """Companion-form generator [[0, 1], [-restoring, -damping]]."""

    flow: DrivingFlow
    damping: CoefficientField
    restoring: CoefficientField

    def __post_init__(self) -> None:
        _check_field(self.flow, self.damping, "damping")
        _check_field(self.flow, self.restoring, "restoring")

    def matrix(self, state: DrivingState) -> np.ndarray:
        return np.array(
            [[0.0, 1.0], [-self.restoring.at(state), -self.damping.at(state)]]
        )

    def matrices(self, states) -> np.ndarray:
        n = len(states)
        out = np.zeros((n, 2, 2))
        out[:, 0, 1] = 1.0
        out[:, 1, 0] = -self.restoring.values(states)
        out[:, 1, 1] = -self.damping.values(states)
        return out

    def is_kinetic(self) -> bool:
        return True

    def norm_bound(self) -> float | None:
        """Pointwise bound on the operator norm, from entrywise field bounds."""
        b = self.restoring.bound()
        a = self.damping.bound()
        return spectral_norm([[0.0, 1.0], [b, a]])

    def constant_coefficients(self) -> tuple[float, float] | None:
        if isinstance(self.damping, ConstantField) and isinstance(
            self.restoring, ConstantField
        ):
            return self.damping.value, self.restoring.value
        return None

    def orbit_coefficients(self, state: DrivingState, t: float):
        """Reduce the generator along the orbit through state over [0, t].

        Negative t walks the orbit backwards; the sign flag tells the
        integrator to negate the right-hand side.
        """
        span = abs(t)
        direction = 1.0 if t >= 0.0 else -1.0
        const = self.constant_coefficients()
        if const is not None:
            return ConstProgram(span, direction, const[0], const[1])
        if isinstance(self.flow, TorusFlow):
            d = _trig_program_field(self.damping, state, self.flow.slope, direction)
            r = _trig_program_field(self.restoring, state, self.flow.slope, direction)
            return TrigProgram(span, direction, *d, *r)
        assert isinstance(self.flow, SuspensionFlow)
        walker = _pcw_values_forward if direction > 0 else _pcw_values_backward
        times, bases = walker(self.flow, state, span)
        damp = np.array([self._field_at_base(self.damping, x) for x in bases])
        rest = np.array([self._field_at_base(self.restoring, x) for x in bases])
        return PcwProgram(span, direction, np.array(times), damp, rest)

    @staticmethod
    def _field_at_base(f, x: float) -> float:
        if isinstance(f, ConstantField):
            return f.value
        return f.value_at_base(x)


@dataclass(frozen=True)
class GeneralGenerator:
    """Unconstrained 2x2 generator; entries are coefficient fields."""

    flow: DrivingFlow
    entries: tuple[tuple[CoefficientField, CoefficientField],
                   tuple[CoefficientField, CoefficientField]]

    def __post_init__(self) -> None:
        for i in range(2):
            for j in range(2):
                _check_field(self.flow, self.entries[i][j], f"entry ({i},{j})")

    @classmethod
    def constant(cls, flow: DrivingFlow, m) -> "GeneralGenerator":
        rows = tuple(
            tuple(ConstantField(float(m[i][j])) for j in range(2)) for i in range(2)
        )
        return cls(flow, rows)

    def matrix(self, state: DrivingState) -> np.ndarray:
        e = self.entries
        return np.array(
            [
                [e[0][0].at(state), e[0][1].at(state)],
                [e[1][0].at(state), e[1][1].at(state)],
            ]
        )

    def matrices(self, states) -> np.ndarray:
        n = len(states)
        out = np.zeros((n, 2, 2))
        for i in range(2):
            for j in range(2):
                out[:, i, j] = self.entries[i][j].values(states)
        return out

    def is_kinetic(self) -> bool:
        e = self.entries
        return (
            isinstance(e[0][0], ConstantField)
            and e[0][0].value == 0.0
            and isinstance(e[0][1], ConstantField)
            and e[0][1].value == 1.0
        )

    def norm_bound(self) -> float | None:
        bounds = [[self.entries[i][j].bound() for j in range(2)] for i in range(2)]
        return spectral_norm(bounds)

    def constant_coefficients(self) -> np.ndarray | None:
        e = self.entries
        if all(isinstance(e[i][j], ConstantField) for i in range(2) for j in range(2)):
            return np.array(
                [
                    [e[0][0].value, e[0][1].value],
                    [e[1][0].value, e[1][1].value],
                ]
            )
        return None

    def orbit_coefficients(self, state: DrivingState, t: float):
        m = self.constant_coefficients()
        if m is None:
            raise NotImplementedError(
                "only constant general generators can be propagated"
            )
        sign = 1.0 if t >= 0.0 else -1.0
        return ConstMatrixProgram(span=abs(t), sign=sign, m=m)


Generator = KineticGenerator | GeneralGenerator


def evaluate(gen, state: DrivingState) -> np.ndarray:
    """Generator matrix at a driving state."""
    return gen.matrix(state)


# ---------------------------------------------------------------------------
# distances


@dataclass(frozen=True)
class DistanceEstimate:
    """A nonnegative scalar (possibly inf) with sampling metadata."""

    value: float
    stderr: float
    count: int
    method: str

    def __float__(self) -> float:
        return self.value


def _check_comparable(a, b) -> None:
    if a.flow != b.flow:
        raise ValueError("generators live over different driving flows")


def _difference_norms(a, b, states) -> np.ndarray:
    return spectral_norms(a.matrices(states) - b.matrices(states))


def _prefix_stable(powered: np.ndarray) -> bool:
    """Crude Cauchy check: the half-sample mean must predict the full mean."""
    n = len(powered)
    if n < 16:
        return True
    half = float(np.mean(powered[: n // 2]))
    full = float(np.mean(powered))
    if full == 0.0:
        return True
    return abs(full - half) <= 0.5 * full


def lp_distance(a, b, p: float, seed: int = 0, samples: int = 100_000) -> DistanceEstimate:
    """L^p deviation of the generator difference under the invariant measure.

    Exact support quadrature is used when one argument is a flowbox
    perturbation of the other (it knows its difference exactly); otherwise a
    seeded Monte Carlo average. Returns inf when neither generator declares a
    norm bound and the empirical moments keep drifting.
    """
    if p < 1.0:
        raise ValueError("p must be at least 1")
    _check_comparable(a, b)
    if a is b:
        return DistanceEstimate(0.0, 0.0, 0, "exact")
    for left, right in ((a, b), (b, a)):
        exact = getattr(left, "exact_lp_difference", None)
        if exact is not None:
            got = exact(right, p)
            if got is not None:
                return DistanceEstimate(got, 0.0, 0, "exact")
    states = a.flow.sample(seed, samples)
    diffs = _difference_norms(a, b, states)
    powered = diffs**p
    unbounded = a.norm_bound() is None or b.norm_bound() is None
    if unbounded and not _prefix_stable(powered):
        return DistanceEstimate(math.inf, math.inf, samples, "divergent")
    mean = float(np.mean(powered))
    se_mean = float(np.std(powered, ddof=1)) / math.sqrt(samples) if samples > 1 else 0.0
    value = mean ** (1.0 / p)
    if mean > 0.0:
        se = se_mean / p * mean ** (1.0 / p - 1.0)
    else:
        se = 0.0
    return DistanceEstimate(value, se, samples, "montecarlo")


def bounded_lp_distance(
    a, b, p: float, seed: int = 0, samples: int = 100_000
) -> DistanceEstimate:
    """x / (1 + x) applied to the L^p deviation; equals 1 when that is inf."""
    raw = lp_distance(a, b, p, seed=seed, samples=samples)
    if math.isinf(raw.value):
        return DistanceEstimate(1.0, 0.0, raw.count, raw.method)
    value = raw.value / (1.0 + raw.value)
    se = raw.stderr / (1.0 + raw.value) ** 2
    return DistanceEstimate(value, se, raw.count, raw.method)


def l1_norm(gen, seed: int = 0, samples: int = 100_000) -> DistanceEstimate:
    """Invariant-measure average of the pointwise operator norm."""
    const = getattr(gen, "constant_coefficients", lambda: None)()
    if const is not None:
        return DistanceEstimate(
            spectral_norm([[0.0, 1.0], [-const[1], -const[0]]]), 0.0, 0, "exact"
        )
    states = gen.flow.sample(seed, samples)
    norms = spectral_norms(gen.matrices(states))
    mean = float(np.mean(norms))
    se = float(np.std(norms, ddof=1)) / math.sqrt(samples) if samples > 1 else 0.0
    return DistanceEstimate(mean, se, samples, "montecarlo")
