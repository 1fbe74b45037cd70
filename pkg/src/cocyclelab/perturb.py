"""Rotation swaps and measure-budgeted flowbox perturbations.

The constant generator P(theta) = [[0, 1], [-theta^2, 0]] drives a
clockwise elliptical rotation whose unit-time propagator carries any
prescribed line onto any other for at least one theta in [pi, 2pi]. A
global perturbation installs such rotation blocks on a flowbox: a thin
union of base cells swept over one unit of fiber time, placed so the
parent cocycle has already expressed its exponents on entry and keeps
expressing them past the exit. Keeping the swept transversal measure
under epsilon' / ((b - a)(L + 4 pi^2)), with epsilon' = eps / (1 - eps),
pins the raw L^1 deviation below epsilon' and hence the bounded distance
below epsilon.

Swapping the fast direction into the slow one forces every vector to
spend half the horizon growing at each exponent, which caps the top
finite-time growth rate near the midpoint of the spectrum: that is the
lowering mechanism this module makes checkable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .driving import CastlePoint, IntervalUnion, SuspensionFlow
from .generators import (
    ConstantField,
    ConstProgram,
    GeneralGenerator,
    KineticGenerator,
    PcwProgram,
    StepField,
)
from .mat2 import ScaledMatrix, projective_distance, spectral_norm
from .propagate import integrate
from .spectrum import (
    SpectrumEstimate,
    SpectrumOptions,
    _scaled_product,
    _window_matrices,
    oseledets_splitting,
    spectrum,
)

__all__ = [
    "PerturbationError",
    "clockwise_line_angle",
    "rotation_generator",
    "rotation_propagator",
    "solve_swap_theta",
    "RotationPlan",
    "LocalSwapGenerator",
    "build_local_swap",
    "BudgetRecord",
    "FlowboxPerturbation",
    "build_global_perturbation",
    "ThreePieceCheck",
    "three_piece_residual",
    "growth_cap",
    "NORM_EQUIVALENCE_C",
    "FOUR_PI_SQ",
]

FOUR_PI_SQ = 4.0 * math.pi * math.pi

# max-entry norm vs operator norm equivalence constant for 2x2 matrices
NORM_EQUIVALENCE_C = 2.0


class PerturbationError(RuntimeError):
    """Construction failure with actionable advice in the message."""


def clockwise_line_angle(u, v) -> float:
    """Clockwise angle from line Ru to line Rv, lifted to [pi, 2pi].

    Coincident lines map to 2pi, the full-turn convention that keeps the
    rotation generator inside its norm budget. On distinct lines the
    function is antisymmetric: angle(u, v) + angle(v, u) = 3 pi.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if not (np.any(u != 0.0) and np.any(v != 0.0)):
        raise ValueError("line directions must be nonzero")
    au = math.atan2(u[1], u[0]) % math.pi
    av = math.atan2(v[1], v[0]) % math.pi
    delta = (au - av) % math.pi
    if delta == 0.0:
        delta = math.pi
    return delta + math.pi


def rotation_generator(theta: float, flow=None) -> GeneralGenerator:
    """The constant generator P(theta) = [[0, 1], [-theta^2, 0]]."""
    if not math.pi <= theta <= 2.0 * math.pi:
        raise ValueError("theta must lie in [pi, 2pi]")
    return GeneralGenerator.constant(flow, [[0.0, 1.0], [-theta * theta, 0.0]])


def rotation_propagator(theta: float, t: float) -> np.ndarray:
    """The elliptical rotation [[cos, sin/theta], [-theta sin, cos]](theta t)."""
    if theta == 0.0:
        raise ValueError("theta must be nonzero")
    c = math.cos(theta * t)
    s = math.sin(theta * t)
    return np.array([[c, s / theta], [-theta * s, c]])


_PARALLEL_TOL = 1e-14
_SWEEP_POINTS = 512
_BISECT_ITER = 80
_SWAP_RESIDUAL_TOL = 1e-10


def solve_swap_theta(u, v) -> tuple[float, float]:
    """theta in [pi, 2pi] whose unit-time rotation carries Ru onto Rv.

    The image line winds once through the projective circle as theta
    sweeps the range while both endpoints fix Ru, so the signed area
    between the image of u and v changes sign at some parameter; a sweep
    brackets the first crossing and bisection sharpens it. gamma is the
    scalar with propagator @ u = gamma * v for the given representatives.
    """
    u_orig = np.asarray(u, dtype=float)
    v_orig = np.asarray(v, dtype=float)
    nu = math.hypot(u_orig[0], u_orig[1])
    nv = math.hypot(v_orig[0], v_orig[1])
    if nu == 0.0 or nv == 0.0:
        raise ValueError("swap directions must be nonzero")
    un = u_orig / nu
    vn = v_orig / nv

    def gamma_at(theta: float) -> float:
        w = rotation_propagator(theta, 1.0) @ u_orig
        return float(np.dot(w, v_orig) / np.dot(v_orig, v_orig))

    if abs(un[0] * vn[1] - un[1] * vn[0]) < _PARALLEL_TOL:
        return 2.0 * math.pi, gamma_at(2.0 * math.pi)

    def cross_with_v(theta: float) -> float:
        w = rotation_propagator(theta, 1.0) @ un
        return float(w[0] * vn[1] - w[1] * vn[0])

    lo = math.pi
    f_lo = cross_with_v(lo)
    bracket = None
    for k in range(1, _SWEEP_POINTS + 1):
        hi = math.pi + math.pi * k / _SWEEP_POINTS
        f_hi = cross_with_v(hi)
        if f_lo == 0.0:
            bracket = (lo, lo)
            break
        if f_lo * f_hi < 0.0:
            bracket = (lo, hi)
            break
        lo, f_lo = hi, f_hi
    if bracket is None:
        raise PerturbationError(
            "projective image of u never crossed v; the winding premise failed"
        )
    lo, hi = bracket
    if lo != hi:
        f_lo = cross_with_v(lo)
        for _ in range(_BISECT_ITER):
            mid = 0.5 * (lo + hi)
            f_mid = cross_with_v(mid)
            if f_mid == 0.0:
                lo = hi = mid
                break
            if f_lo * f_mid < 0.0:
                hi = mid
            else:
                lo, f_lo = mid, f_mid
    theta = 0.5 * (lo + hi)
    w = rotation_propagator(theta, 1.0) @ un
    if projective_distance(w, vn) > _SWAP_RESIDUAL_TOL:
        raise PerturbationError("swap root lost projective accuracy")
    return theta, gamma_at(theta)


@dataclass(frozen=True)
class RotationPlan:
    """One installed swap: the rotation and what it must achieve.

    literal_angle_works records whether the bare clockwise line angle
    would have achieved the same swap; the elliptical rotation advances
    its phase in sheared coordinates, so that is not guaranteed.
    """

    theta: float
    source_line: np.ndarray
    target_line: np.ndarray
    gamma: float
    anchor: object
    window: tuple[float, float]
    cell: tuple[float, float] | None
    residual: float
    literal_angle_works: bool

    def propagator(self) -> np.ndarray:
        return rotation_propagator(self.theta, 1.0)

    def generator_matrix(self) -> np.ndarray:
        th = self.theta
        return np.array([[0.0, 1.0], [-th * th, 0.0]])


def _plan_for(u, v, anchor, window, cell) -> RotationPlan:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    theta, gamma = solve_swap_theta(u, v)
    residual = projective_distance(rotation_propagator(theta, 1.0) @ u, v)
    literal = clockwise_line_angle(u, v)
    literal_works = bool(
        projective_distance(rotation_propagator(literal, 1.0) @ u, v)
        < _SWAP_RESIDUAL_TOL
    )
    return RotationPlan(
        theta=theta,
        source_line=u,
        target_line=v,
        gamma=gamma,
        anchor=anchor,
        window=window,
        cell=cell,
        residual=residual,
        literal_angle_works=literal_works,
    )


def _segment_offset(flow, anchor, state, tol: float = 1e-9) -> float | None:
    """Offset s in [0, 1] with evolve(anchor, s) = state, else None."""
    if isinstance(anchor, CastlePoint):
        d = abs(anchor.base - state.base)
        if min(d, 1.0 - d) < tol:
            s = state.fiber - anchor.fiber
            if -tol <= s <= 1.0 + tol:
                return min(max(s, 0.0), 1.0)
        nxt = flow.rotate(anchor.base)
        d = abs(nxt - state.base)
        if min(d, 1.0 - d) < tol:
            s = (flow.roof(anchor.base) - anchor.fiber) + state.fiber
            if -tol <= s <= 1.0 + tol:
                return min(max(s, 0.0), 1.0)
        return None
    s = (state.x - anchor.x) % 1.0
    if s > 1.0 + tol and s < 1.0 - tol:
        return None
    expected_y = (anchor.y + flow.slope * s) % 1.0
    dy = abs(expected_y - state.y)
    if min(dy, 1.0 - dy) < tol and s <= 1.0 + tol:
        return min(s, 1.0)
    return None


class LocalSwapGenerator:
    """Parent generator with one rotation block on a single orbit segment.

    The support is the unit-time orbit segment from the anchor, a set of
    measure zero: evaluation anywhere else returns the parent's matrix
    bit-exactly, and only programs launched from states on the anchored
    segment see the block.
    """

    def __init__(self, parent, anchor, plan: RotationPlan) -> None:
        self.parent = parent
        self.anchor = anchor
        self.plan = plan

    @property
    def flow(self):
        return self.parent.flow

    def is_kinetic(self) -> bool:
        return bool(self.parent.is_kinetic())

    def norm_bound(self) -> float | None:
        parent_bound = self.parent.norm_bound()
        if parent_bound is None:
            return None
        return max(parent_bound, self.plan.theta ** 2)

    def constant_coefficients(self):
        return None

    def matrix(self, state) -> np.ndarray:
        if _segment_offset(self.flow, self.anchor, state) is not None:
            return self.plan.generator_matrix()
        return self.parent.matrix(state)

    def matrices(self, states) -> np.ndarray:
        return np.stack([self.matrix(s) for s in states])

    def orbit_coefficients(self, state, t: float):
        """Parent program, spliced with the block when launched on-segment.

        States off the anchored orbit, the almost-sure case, propagate
        exactly as the parent.
        """
        off = _segment_offset(self.flow, self.anchor, state)
        if off is None or t == 0.0:
            return self.parent.orbit_coefficients(state, t)
        sign = 1.0 if t > 0.0 else -1.0
        span = abs(t)
        if sign > 0.0:
            block = (0.0, min(span, 1.0 - off))
        else:
            block = (max(0.0, off - 1.0), min(span, off))
        if block[0] >= block[1]:
            return self.parent.orbit_coefficients(state, t)
        parent_prog = self.parent.orbit_coefficients(state, t)
        th2 = self.plan.theta ** 2
        times = [0.0]
        damping: list[float] = []
        restoring: list[float] = []
        for t0, t1, da, re, inside in _merge_block(parent_prog, span, block):
            times.append(t1)
            if inside:
                damping.append(0.0)
                restoring.append(th2)
            else:
                damping.append(da)
                restoring.append(re)
        return PcwProgram(
            span=span,
            sign=sign,
            times=np.array(times),
            damping=np.array(damping),
            restoring=np.array(restoring),
        )


def _merge_block(parent_prog, span: float, block: tuple[float, float]):
    """Split a program's segments at the block walls.

    Yields (t0, t1, damping, restoring, inside_block) tiles of [0, span].
    """
    if isinstance(parent_prog, PcwProgram):
        times = [float(x) for x in parent_prog.times]
        da = [float(x) for x in parent_prog.damping]
        re = [float(x) for x in parent_prog.restoring]
    elif isinstance(parent_prog, ConstProgram):
        times = [0.0, span]
        da = [parent_prog.damping]
        re = [parent_prog.restoring]
    else:
        raise NotImplementedError(
            "local swaps need piecewise-constant parent coefficients"
        )
    b0, b1 = block
    out = []
    for i in range(len(times) - 1):
        t0, t1 = times[i], times[i + 1]
        if t1 <= t0:
            continue
        marks = sorted({t0, t1, min(max(b0, t0), t1), min(max(b1, t0), t1)})
        for x0, x1 in zip(marks, marks[1:]):
            if x1 <= x0:
                continue
            inside = b0 <= x0 and x1 <= b1
            out.append((x0, x1, da[i], re[i], inside))
    return out


def build_local_swap(parent, state, u, v) -> LocalSwapGenerator:
    """Perturb the parent by a rotation block on the unit segment at state.

    The block's unit-time propagator carries line Ru onto Rv, so the
    perturbed cocycle satisfies Phi(1, state) u parallel to v.
    """
    if not parent.is_kinetic():
        raise ValueError("local swaps preserve only the kinetic class")
    plan = _plan_for(u, v, state, (0.0, 1.0), None)
    return LocalSwapGenerator(parent, state, plan)


# ---------------------------------------------------------------------------
# global flowbox perturbation


@dataclass(frozen=True)
class BudgetRecord:
    """The measure arithmetic pinning the distance to the parent.

    base_mass is the transversal measure of the base union: Lebesgue
    width over the mean roof, so the unit-height flowbox over the union
    has invariant measure (b - a) * base_mass. box_bound is the raw L^1
    deviation bound (b - a)(L + 4 pi^2) * base_mass < epsilon_prime.
    """

    epsilon: float
    epsilon_prime: float
    sup_norm_L: float
    window: tuple[float, float]
    mass_budget: float
    base_mass: float
    base_width: float
    box_bound: float
    sigma1_exact: float


class FlowboxPerturbation:
    """Kinetic generator equal to the parent off the flowbox.

    Inside, each base cell carries its plan's rotation generator. The
    whole object stays kinetic: damping 0 and restoring theta^2 on the
    box, the parent's coefficients elsewhere.
    """

    def __init__(
        self,
        parent: KineticGenerator,
        window: tuple[float, float],
        sigma: IntervalUnion,
        plans: tuple[RotationPlan, ...],
        budget: BudgetRecord,
        eta: float,
        screen_report: tuple[dict, ...] = (),
    ) -> None:
        if len(sigma) != len(plans):
            raise ValueError("one plan per base cell is required")
        self.parent = parent
        self.window = window
        self.sigma = sigma
        self.plans = plans
        self.budget = budget
        self.eta = eta
        self.screen_report = screen_report

    @property
    def flow(self):
        return self.parent.flow

    def is_kinetic(self) -> bool:
        return True

    def constant_coefficients(self):
        return None

    def norm_bound(self) -> float | None:
        parent_bound = self.parent.norm_bound()
        if parent_bound is None:
            return None
        box = max((p.theta ** 2 for p in self.plans), default=0.0)
        return max(parent_bound, box)

    def sup_norm_on_support(self) -> float:
        """Exact sup of the generator norm over the flowbox; at most 4 pi^2."""
        return max(p.theta ** 2 for p in self.plans)

    def in_box(self, state: CastlePoint) -> int | None:
        """Plan index when the state lies in the flowbox, else None."""
        a, b = self.window
        if not a <= state.fiber < b:
            return None
        return self.sigma.find(state.base)

    def matrix(self, state: CastlePoint) -> np.ndarray:
        idx = self.in_box(state)
        if idx is None:
            return self.parent.matrix(state)
        return self.plans[idx].generator_matrix()

    def matrices(self, states) -> np.ndarray:
        return np.stack([self.matrix(s) for s in states])

    def orbit_coefficients(self, state: CastlePoint, t: float):
        """Level walker emitting parent segments split at the box walls."""
        if t == 0.0:
            return self.parent.orbit_coefficients(state, t)
        flow = self.flow
        a, b = self.window
        sign = 1.0 if t > 0.0 else -1.0
        span = abs(t)
        times = [0.0]
        damping: list[float] = []
        restoring: list[float] = []
        elapsed = 0.0
        x = state.base
        f = state.fiber

        def emit(length: float, da: float, re: float) -> bool:
            """Append one piece, truncated at the span; True when done."""
            nonlocal elapsed
            if length <= 0.0:
                return False
            remaining = span - elapsed
            step = min(length, remaining)
            elapsed += step
            times.append(elapsed)
            damping.append(da)
            restoring.append(re)
            return step >= remaining

        done = False
        while not done:
            idx = self.sigma.find(x)
            da, re = self._parent_coeffs(x)
            if sign > 0.0:
                roof = flow.roof(x)
                if idx is None or f >= b:
                    done = emit(roof - f, da, re)
                else:
                    lo = max(f, a)
                    hi = min(roof, b)
                    th2 = self.plans[idx].theta ** 2
                    done = emit(lo - f, da, re)
                    if not done and hi > lo:
                        done = emit(hi - lo, 0.0, th2)
                    if not done:
                        done = emit(roof - hi, da, re)
                if not done:
                    x = flow.rotate(x)
                    f = 0.0
            else:
                if idx is None or f <= a:
                    done = emit(f, da, re)
                else:
                    hi = min(f, b)
                    th2 = self.plans[idx].theta ** 2
                    done = emit(f - hi, da, re)
                    if not done and hi > a:
                        done = emit(hi - a, 0.0, th2)
                    if not done:
                        done = emit(a, da, re)
                if not done:
                    x = flow.rotate(x, -1)
                    f = flow.roof(x)
        return PcwProgram(
            span=span,
            sign=sign,
            times=np.array(times),
            damping=np.array(damping),
            restoring=np.array(restoring),
        )

    def _parent_coeffs(self, base: float) -> tuple[float, float]:
        da = self.parent.damping
        re = self.parent.restoring
        da_v = da.value if isinstance(da, ConstantField) else da.value_at_base(base)
        re_v = re.value if isinstance(re, ConstantField) else re.value_at_base(base)
        return da_v, re_v

    def deviation_profile(self) -> tuple[tuple[float, float], ...]:
        """(cell width, |A - P| on the cell) pairs.

        The deviation is constant per cell because every cell sits
        inside a single flat cell of both parent coefficient fields.
        """
        out = []
        for (lo, hi), plan in zip(self.sigma, self.plans):
            da, re = self._parent_coeffs(0.5 * (lo + hi))
            a_m = np.array([[0.0, 1.0], [-re, -da]])
            delta = spectral_norm(a_m - plan.generator_matrix())
            out.append((hi - lo, delta))
        return tuple(out)

    def exact_lp_difference(self, other, p: float) -> float | None:
        """Exact support quadrature of the raw L^p deviation from the parent."""
        if other is not self.parent:
            return None
        a, b = self.window
        mean_roof = self.flow.mean_roof()
        total = 0.0
        for width, delta in self.deviation_profile():
            total += width * (b - a) * delta ** p
        return (total / mean_roof) ** (1.0 / p)


def _sup_norm(parent: KineticGenerator) -> float:
    """Exact sup of the generator norm over the base."""
    da = parent.damping
    re = parent.restoring
    cuts = {0.0}
    for f in (da, re):
        if isinstance(f, StepField):
            cuts.update(lo for lo, _, _ in f.cells)
    best = 0.0
    for x in cuts:
        a_v, r_v = _flat_coeffs(parent, x)
        best = max(best, spectral_norm([[0.0, 1.0], [-r_v, -a_v]]))
    return best


def _flat_coeffs(parent: KineticGenerator, x: float) -> tuple[float, float]:
    da = parent.damping
    re = parent.restoring
    da_v = da.value if isinstance(da, ConstantField) else da.value_at_base(x)
    re_v = re.value if isinstance(re, ConstantField) else re.value_at_base(x)
    return da_v, re_v


def _parent_cell_interval(parent: KineticGenerator, x: float) -> tuple[float, float]:
    """The largest interval around x where both coefficient fields are flat."""
    lo, hi = 0.0, 1.0
    for f in (parent.damping, parent.restoring):
        if isinstance(f, StepField):
            c_lo, c_hi, _ = f.cell_of(x)
            lo = max(lo, c_lo)
            hi = min(hi, c_hi)
    return lo, hi


def _screen_point(
    parent: KineticGenerator,
    x: float,
    half_n: int,
    eta: float,
    lam1: float,
    lam2: float,
    opts: SpectrumOptions,
    frames,
):
    """The finite-horizon accuracy screen at one base point.

    The parent's growth along each Oseledets direction must match the
    global exponents to eta / 8 over the entry half-orbit and to eta
    over the exit stretch. Fast-direction growth is read off the matrix
    image; slow-direction growth comes from the accumulated determinant,
    log s2 = log|det| - log s1, because forming the small image directly
    cancels catastrophically over long horizons.
    """
    a = float(half_n)
    base_state = CastlePoint(x, 0.0)
    entry = CastlePoint(x, a)
    exit_ = CastlePoint(x, a + 1.0)
    frame0 = frames(base_state, a)
    if frame0 is None or frame0.degenerate:
        return None
    frame_entry = frames(entry, a)
    if frame_entry is None or frame_entry.degenerate:
        return None
    frame_exit = frames(exit_, float(half_n - 1))
    if frame_exit is None or frame_exit.degenerate:
        return None
    cfg = opts.integrator
    acc, _, log_det = _scaled_product(parent, base_state, half_n, opts.window, cfg, +1)
    g1 = acc.log_norm_of_image(frame0.E1) / a
    g2 = (log_det - acc.log_norm()) / a
    if abs(lam1 - g1) >= eta / 8.0 or abs(lam2 - g2) >= eta / 8.0:
        return None
    span_x = half_n - 1
    acc_x, _, log_det_x = _scaled_product(parent, exit_, span_x, opts.window, cfg, +1)
    g1x = acc_x.log_norm_of_image(frame_exit.E1) / span_x
    g2x = (log_det_x - acc_x.log_norm()) / span_x
    if abs(lam1 - g1x) >= eta or abs(lam2 - g2x) >= eta:
        return None
    return {
        "base": x,
        "entry_frame": frame_entry,
        "exit_frame": frame_exit,
        "entry_growth": (g1, g2),
        "exit_growth": (g1x, g2x),
    }


_FRAME_VARIATION_TOL = 1e-3
_CELL_SHRINK_LIMIT = 6


def _frame_variation_ok(lo: float, hi: float, half_n: int, frames) -> bool:
    """Entry and exit frames must be projectively stable across the cell."""
    a = float(half_n)
    mid = 0.5 * (lo + hi)
    horizon_exit = float(half_n - 1)
    center_entry = frames(CastlePoint(mid, a), a)
    center_exit = frames(CastlePoint(mid, a + 1.0), horizon_exit)
    if center_entry is None or center_exit is None:
        return False
    for edge in (lo, max(lo, hi - 1e-12)):
        fe = frames(CastlePoint(edge, a), a)
        fx = frames(CastlePoint(edge, a + 1.0), horizon_exit)
        if fe is None or fx is None:
            return False
        if (
            projective_distance(fe.E1, center_entry.E1) > _FRAME_VARIATION_TOL
            or projective_distance(fx.E2, center_exit.E2) > _FRAME_VARIATION_TOL
        ):
            return False
    return True


def build_global_perturbation(
    parent: KineticGenerator,
    big_n: int,
    epsilon: float,
    eta: float,
    frames=None,
    spectrum_est: SpectrumEstimate | None = None,
    opts: SpectrumOptions | None = None,
    candidates: int = 64,
    max_cells: int = 16,
    mass_fraction: float = 0.5,
    seed: int = 0,
) -> FlowboxPerturbation:
    """Rotation-swap perturbation on the flowbox over [N/2, N/2 + 1].

    Screens candidate base points for finite-horizon Oseledets accuracy
    eta, gathers thin cells around the survivors within the measure
    budget for epsilon, and installs per-cell swaps sending the entry
    frame's fast line onto the exit frame's slow line. frames may inject
    a provider (state, horizon) -> frame; the default estimates frames
    from the parent directly.
    """
    flow = parent.flow
    if not isinstance(flow, SuspensionFlow):
        raise PerturbationError("global perturbations need a suspension flow")
    if big_n < 6 or big_n % 2 != 0:
        raise PerturbationError("the horizon N must be an even integer >= 6")
    if big_n // 2 + 1 > flow.height0:
        raise PerturbationError(
            "the flowbox over [N/2, N/2 + 1] must fit under the lowest roof "
            "with a unit margin; lower N or raise the castle"
        )
    if not 0.0 < epsilon < 1.0:
        raise PerturbationError("epsilon must lie in (0, 1)")
    if eta <= 0.0:
        raise PerturbationError("eta must be positive")
    opts = opts or SpectrumOptions()
    if frames is None:
        def frames(state, horizon):
            return oseledets_splitting(parent, state, horizon, opts)
    if spectrum_est is None:
        spectrum_est = spectrum(parent, None, None, opts)
    if spectrum_est.gap() <= 0.0:
        raise PerturbationError(
            "the parent spectrum is not resolvably simple; nothing to lower"
        )
    lam1, lam2 = spectrum_est.lambda1, spectrum_est.lambda2
    half_n = big_n // 2
    a, b = float(half_n), float(half_n + 1)

    sup_l = _sup_norm(parent)
    eps_prime = epsilon / (1.0 - epsilon)
    mass_budget = eps_prime / ((b - a) * (sup_l + FOUR_PI_SQ))
    mean_roof = flow.mean_roof()

    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 91)))
    xs = rng.random(candidates)
    survivors = []
    for x in xs:
        hit = _screen_point(parent, float(x), half_n, eta, lam1, lam2, opts, frames)
        if hit is not None:
            survivors.append(hit)
        if len(survivors) >= max_cells:
            break
    if not survivors:
        raise PerturbationError(
            f"no base point passed the eta={eta:g} accuracy screen at N={big_n}; "
            "increase N so finite-time growth settles onto the exponents"
        )

    # cell widths are base-Lebesgue; the budget caps width / mean_roof
    width_cap = mass_fraction * mass_budget * mean_roof / len(survivors)
    cells: list[tuple[float, float]] = []
    plans: list[RotationPlan] = []
    report: list[dict] = []
    for hit in survivors:
        x = hit["base"]
        c_lo, c_hi = _parent_cell_interval(parent, x)
        width = width_cap
        placed = None
        for _ in range(_CELL_SHRINK_LIMIT):
            lo = max(c_lo, x - 0.5 * width)
            hi = min(c_hi, x + 0.5 * width)
            if hi <= lo:
                break
            if _frame_variation_ok(lo, hi, half_n, frames):
                placed = (lo, hi)
                break
            width *= 0.5
        if placed is None:
            continue
        lo, hi = placed
        if any(l0 < hi and lo < h0 for l0, h0 in cells):
            continue
        plan = _plan_for(
            hit["entry_frame"].E1,
            hit["exit_frame"].E2,
            CastlePoint(x, a),
            (a, b),
            (lo, hi),
        )
        cells.append((lo, hi))
        plans.append(plan)
        report.append(hit)
    if not cells:
        raise PerturbationError(
            "every screened cell failed the frame-variation or disjointness "
            "check; rerun with more candidates or a larger eta"
        )
    order = np.argsort([c[0] for c in cells])
    cells = [cells[i] for i in order]
    plans = [plans[i] for i in order]
    report = [report[i] for i in order]
    sigma = IntervalUnion(cells)
    base_width = sigma.measure()
    base_mass = base_width / mean_roof
    if base_mass >= mass_budget:
        raise PerturbationError("cell assembly exceeded the measure budget")
    box_bound = (b - a) * (sup_l + FOUR_PI_SQ) * base_mass

    sigma1 = 0.0
    for (lo, hi), plan in zip(cells, plans):
        da_v, re_v = _flat_coeffs(parent, 0.5 * (lo + hi))
        a_m = np.array([[0.0, 1.0], [-re_v, -da_v]])
        sigma1 += (hi - lo) * (b - a) * spectral_norm(a_m - plan.generator_matrix())
    sigma1 /= mean_roof

    budget = BudgetRecord(
        epsilon=epsilon,
        epsilon_prime=eps_prime,
        sup_norm_L=sup_l,
        window=(a, b),
        mass_budget=mass_budget,
        base_mass=base_mass,
        base_width=base_width,
        box_bound=box_bound,
        sigma1_exact=sigma1,
    )
    return FlowboxPerturbation(
        parent=parent,
        window=(a, b),
        sigma=sigma,
        plans=tuple(plans),
        budget=budget,
        eta=eta,
        screen_report=tuple(report),
    )


@dataclass(frozen=True)
class ThreePieceCheck:
    """Defect of the entry-swap-exit factorization over the horizon."""

    absolute: float
    relative: float
    log_norm_full: float


def three_piece_residual(
    boxed: FlowboxPerturbation,
    plan_index: int,
    big_n: int,
    opts: SpectrumOptions | None = None,
) -> ThreePieceCheck:
    """Compare Phi_B(N) against Phi_A(N/2 - 1) . swap . Phi_A(N/2).

    The left side is the windowed product of the perturbed cocycle; the
    right side composes parent propagators with the closed-form rotation.
    The two paths share no arithmetic, so agreement certifies the splice.
    """
    opts = opts or SpectrumOptions()
    plan = boxed.plans[plan_index]
    x = plan.anchor.base
    a, b = boxed.window
    base_state = CastlePoint(x, 0.0)
    full = ScaledMatrix.identity()
    for m in _window_matrices(boxed, base_state, big_n, opts.window, opts.integrator):
        full = full.left_multiply(m)
    p1 = integrate(boxed.parent, base_state, a, opts.integrator).matrix
    p3 = integrate(
        boxed.parent, CastlePoint(x, b), float(big_n) - b, opts.integrator
    ).matrix
    comp = (
        ScaledMatrix.identity()
        .left_multiply(p1)
        .left_multiply(plan.propagator())
        .left_multiply(p3)
    )
    scale_gap = comp.log_scale - full.log_scale
    if abs(scale_gap) > 200.0:
        return ThreePieceCheck(math.inf, math.inf, full.log_norm())
    diff = spectral_norm(full.m - comp.m * math.exp(scale_gap))
    relative = diff / spectral_norm(full.m)
    log_abs = math.log(diff) + full.log_scale if diff > 0.0 else -math.inf
    absolute = math.exp(log_abs) if log_abs < 700.0 else math.inf
    return ThreePieceCheck(absolute, relative, full.log_norm())


def growth_cap(
    boxed: FlowboxPerturbation,
    plan_index: int,
    big_n: int,
    spectrum_est: SpectrumEstimate,
    opts: SpectrumOptions | None = None,
) -> tuple[float, float]:
    """(measured, cap) for the top growth rate at an installed point.

    The cap is the midpoint of the parent spectrum plus swap-cost and
    accuracy corrections shrinking like 1/N; the measured value is the
    finite-time top growth of the perturbed cocycle over N from the
    installed base point.
    """
    opts = opts or SpectrumOptions()
    plan = boxed.plans[plan_index]
    base_state = CastlePoint(plan.anchor.base, 0.0)
    acc = ScaledMatrix.identity()
    for m in _window_matrices(boxed, base_state, big_n, opts.window, opts.integrator):
        acc = acc.left_multiply(m)
    measured = acc.log_norm() / float(big_n)
    lam1, lam2 = spectrum_est.lambda1, spectrum_est.lambda2
    eta = boxed.eta
    cap = (
        0.5 * (lam1 + lam2)
        + max(abs(lam1), abs(lam2)) / big_n
        + (math.log(NORM_EQUIVALENCE_C) + FOUR_PI_SQ + 2.0 * eta) / big_n
        + eta
    )
    return measured, cap
