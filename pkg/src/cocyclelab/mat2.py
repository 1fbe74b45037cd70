"""Closed-form helpers for 2x2 real matrices.

Everything here is scalar arithmetic on small arrays: spectral norms via the
Frobenius/determinant identity, right singular directions from the normal
matrix, and a log-scaled matrix carrier for long products that would overflow
double precision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "spectral_norm",
    "spectral_norms",
    "singular_values",
    "right_singular_directions",
    "projective_distance",
    "line_angle",
    "ScaledMatrix",
    "neumaier_sum",
    "kinetic_expm",
    "expm2",
]


def spectral_norm(m) -> float:
    """Operator 2-norm of a 2x2 matrix, exact up to rounding.

    Uses s1 = (sqrt(f + 2|d|) + sqrt(f - 2|d|)) / 2 with f the squared
    Frobenius norm and d the determinant.
    """
    a, b = float(m[0][0]), float(m[0][1])
    c, d = float(m[1][0]), float(m[1][1])
    f = a * a + b * b + c * c + d * d
    det2 = 2.0 * abs(a * d - b * c)
    return 0.5 * (math.sqrt(f + det2) + math.sqrt(max(f - det2, 0.0)))


def spectral_norms(ms: np.ndarray) -> np.ndarray:
    """Vectorized operator 2-norms for an (n, 2, 2) stack."""
    a = ms[..., 0, 0]
    b = ms[..., 0, 1]
    c = ms[..., 1, 0]
    d = ms[..., 1, 1]
    f = a * a + b * b + c * c + d * d
    det2 = 2.0 * np.abs(a * d - b * c)
    return 0.5 * (np.sqrt(f + det2) + np.sqrt(np.maximum(f - det2, 0.0)))


def singular_values(m) -> tuple[float, float]:
    """(s_max, s_min) of a 2x2 matrix."""
    a, b = float(m[0][0]), float(m[0][1])
    c, d = float(m[1][0]), float(m[1][1])
    f = a * a + b * b + c * c + d * d
    det2 = 2.0 * abs(a * d - b * c)
    hi = math.sqrt(f + det2)
    lo = math.sqrt(max(f - det2, 0.0))
    return 0.5 * (hi + lo), 0.5 * (hi - lo)


def right_singular_directions(m) -> tuple[float, float, np.ndarray, np.ndarray]:
    """(s_max, s_min, v_max, v_min) with unit right singular vectors.

    v_max maximizes |m v| over unit vectors, v_min minimizes it; they are the
    eigenvectors of m^T m. Near-degenerate inputs still return an orthonormal
    pair, callers decide whether the gap is large enough to trust it.
    """
    m = np.asarray(m, dtype=float)
    g = m.T @ m
    # eigenangle of the symmetric normal matrix
    half = 0.5 * math.atan2(2.0 * g[0, 1], g[0, 0] - g[1, 1])
    v1 = np.array([math.cos(half), math.sin(half)])
    v2 = np.array([-v1[1], v1[0]])
    s1 = float(np.linalg.norm(m @ v1))
    s2 = float(np.linalg.norm(m @ v2))
    if s1 >= s2:
        return s1, s2, v1, v2
    return s2, s1, v2, v1


def projective_distance(u, v) -> float:
    """|sin| of the angle between the lines spanned by u and v."""
    ux, uy = float(u[0]), float(u[1])
    vx, vy = float(v[0]), float(v[1])
    nu = math.hypot(ux, uy)
    nv = math.hypot(vx, vy)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("projective distance undefined for the zero vector")
    return abs(ux * vy - uy * vx) / (nu * nv)


def line_angle(u) -> float:
    """Angle of the line spanned by u, reduced to [0, pi)."""
    ang = math.atan2(float(u[1]), float(u[0])) % math.pi
    return 0.0 if ang == math.pi else ang


@dataclass
class ScaledMatrix:
    """A 2x2 matrix stored as m * exp(log_scale) to survive long products."""

    m: np.ndarray
    log_scale: float = 0.0

    _CAP = 1e120

    @classmethod
    def identity(cls) -> "ScaledMatrix":
        return cls(np.eye(2), 0.0)

    def left_multiply(self, other: np.ndarray) -> "ScaledMatrix":
        """Return other @ self, renormalized when entries leave [1e-120, 1e120]."""
        m = np.asarray(other, dtype=float) @ self.m
        scale = self.log_scale
        peak = float(np.max(np.abs(m)))
        if peak > self._CAP or (0.0 < peak < 1.0 / self._CAP):
            m = m / peak
            scale += math.log(peak)
        return ScaledMatrix(m, scale)

    def log_norm(self) -> float:
        return self.log_scale + math.log(spectral_norm(self.m))

    def log_norm_of_image(self, v) -> float:
        """log |self @ v| for a unit-ish vector v."""
        w = self.m @ np.asarray(v, dtype=float)
        return self.log_scale + math.log(float(np.linalg.norm(w)))

    def image_direction(self, v) -> np.ndarray:
        w = self.m @ np.asarray(v, dtype=float)
        n = float(np.linalg.norm(w))
        if n == 0.0:
            raise ValueError("image collapsed to zero")
        return w / n

    def right_directions(self):
        return right_singular_directions(self.m)

    def log_singular_values(self) -> tuple[float, float]:
        """Log singular values; -inf when a value underflows the carrier.

        The smaller singular value of a long product is floor-limited at
        roughly eps times the larger one, so callers needing the true
        small exponent should recover it from accumulated determinants.
        """
        s1, s2 = singular_values(self.m)
        l1 = self.log_scale + math.log(s1) if s1 > 0.0 else -math.inf
        l2 = self.log_scale + math.log(s2) if s2 > 0.0 else -math.inf
        return l1, l2


def neumaier_sum(values) -> float:
    """Compensated sum; error does not grow with the number of terms."""
    total = 0.0
    comp = 0.0
    for v in values:
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
    return total + comp


def _cs_pair(z: float) -> tuple[float, float]:
    """cosh(sqrt(z)) and sinh(sqrt(z))/sqrt(z), continued through z <= 0.

    A short series bridges the double-root regime where the hyperbolic
    and trigonometric branches both cancel.
    """
    if abs(z) < 1e-8:
        c = 1.0 + z * (1.0 / 2.0 + z * (1.0 / 24.0 + z / 720.0))
        s = 1.0 + z * (1.0 / 6.0 + z * (1.0 / 120.0 + z / 5040.0))
    elif z > 0.0:
        r = math.sqrt(z)
        c = math.cosh(r)
        s = math.sinh(r) / r
    else:
        r = math.sqrt(-z)
        c = math.cos(r)
        s = math.sin(r) / r
    return c, s


def kinetic_expm(damping: float, restoring: float, t: float) -> np.ndarray:
    """exp(t * [[0, 1], [-restoring, -damping]]), exact in closed form.

    Writing A = mI + N with m = -damping/2, the remainder satisfies
    N^2 = disc * I for disc = damping^2/4 - restoring, so
    exp(tA) = e^{mt} (c(z) I + t s(z) N) with z = disc t^2.
    """
    m = -0.5 * damping
    disc = 0.25 * damping * damping - restoring
    c, s = _cs_pair(disc * t * t)
    e = math.exp(m * t)
    ts = t * s
    return np.array(
        [
            [e * (c - m * ts), e * ts],
            [e * (-restoring * ts), e * (c + m * ts)],
        ]
    )


def expm2(a, t: float = 1.0) -> np.ndarray:
    """exp(t * a) for any real 2x2 matrix, exact in closed form.

    Cayley-Hamilton gives (a - mI)^2 = (m^2 - det a) I at m = tr(a)/2,
    so the same c/s pair as the kinetic case applies.
    """
    a00 = float(a[0][0])
    a01 = float(a[0][1])
    a10 = float(a[1][0])
    a11 = float(a[1][1])
    m = 0.5 * (a00 + a11)
    det = a00 * a11 - a01 * a10
    c, s = _cs_pair((m * m - det) * t * t)
    e = math.exp(m * t)
    ts = t * s
    return np.array(
        [
            [e * (c + (a00 - m) * ts), e * a01 * ts],
            [e * a10 * ts, e * (c + (a11 - m) * ts)],
        ]
    )
