"""Dormand-Prince 5(4) steppers for the 2x2 matrix equation X' = s A(t) X.

Two specializations: constant coefficients (also the workhorse for
piecewise-constant schedules, driven one segment at a time) and
trigonometric-polynomial coefficients along torus orbits. Both operate on
the flattened state (x00, x01, x10, x11) with scalar arithmetic so they can
be compiled by numba when it is installed; without numba the same source
runs as plain Python.

Step control follows the usual embedded-pair recipe: scaled RMS error norm,
safety factor 0.9, growth clamped to [0.2, 10], first-same-as-last reuse of
the seventh stage. Status 1 reports step-size underflow.
"""
from __future__ import annotations

import math

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(f):
            return f

        return wrap


__all__ = ["dp45_const", "dp45_trig", "HAVE_NUMBA"]

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0

# Dormand-Prince tableau
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = (
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
)
_A61, _A62, _A63, _A64, _A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
_B1, _B3, _B4, _B5, _B6 = (
    35.0 / 384.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
)
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)

_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0


@njit(cache=True)
def dp45_const(damping, restoring, sign, span, y0, y1, y2, y3, rtol, atol, max_step):
    """Integrate over [0, span] with constant coefficients.

    Returns (y0, y1, y2, y3, accepted, rejected, err_acc, status).
    """
    da = sign * damping
    re = sign * restoring
    s = sign

    t = 0.0
    h = max_step if max_step < span else span
    accepted = 0
    rejected = 0
    err_acc = 0.0
    status = 0
    h_floor = 1e-13 * span + 1e-290

    # k1 = f(y)
    k10 = s * y2
    k11 = s * y3
    k12 = -re * y0 - da * y2
    k13 = -re * y1 - da * y3

    while True:
        remaining = span - t
        if remaining <= h_floor:
            break
        if h > remaining:
            h = remaining
        if h < h_floor:
            status = 1
            break

        w0 = y0 + h * _A21 * k10
        w1 = y1 + h * _A21 * k11
        w2 = y2 + h * _A21 * k12
        w3 = y3 + h * _A21 * k13
        k20 = s * w2
        k21 = s * w3
        k22 = -re * w0 - da * w2
        k23 = -re * w1 - da * w3

        w0 = y0 + h * (_A31 * k10 + _A32 * k20)
        w1 = y1 + h * (_A31 * k11 + _A32 * k21)
        w2 = y2 + h * (_A31 * k12 + _A32 * k22)
        w3 = y3 + h * (_A31 * k13 + _A32 * k23)
        k30 = s * w2
        k31 = s * w3
        k32 = -re * w0 - da * w2
        k33 = -re * w1 - da * w3

        w0 = y0 + h * (_A41 * k10 + _A42 * k20 + _A43 * k30)
        w1 = y1 + h * (_A41 * k11 + _A42 * k21 + _A43 * k31)
        w2 = y2 + h * (_A41 * k12 + _A42 * k22 + _A43 * k32)
        w3 = y3 + h * (_A41 * k13 + _A42 * k23 + _A43 * k33)
        k40 = s * w2
        k41 = s * w3
        k42 = -re * w0 - da * w2
        k43 = -re * w1 - da * w3

        w0 = y0 + h * (_A51 * k10 + _A52 * k20 + _A53 * k30 + _A54 * k40)
        w1 = y1 + h * (_A51 * k11 + _A52 * k21 + _A53 * k31 + _A54 * k41)
        w2 = y2 + h * (_A51 * k12 + _A52 * k22 + _A53 * k32 + _A54 * k42)
        w3 = y3 + h * (_A51 * k13 + _A52 * k23 + _A53 * k33 + _A54 * k43)
        k50 = s * w2
        k51 = s * w3
        k52 = -re * w0 - da * w2
        k53 = -re * w1 - da * w3

        w0 = y0 + h * (_A61 * k10 + _A62 * k20 + _A63 * k30 + _A64 * k40 + _A65 * k50)
        w1 = y1 + h * (_A61 * k11 + _A62 * k21 + _A63 * k31 + _A64 * k41 + _A65 * k51)
        w2 = y2 + h * (_A61 * k12 + _A62 * k22 + _A63 * k32 + _A64 * k42 + _A65 * k52)
        w3 = y3 + h * (_A61 * k13 + _A62 * k23 + _A63 * k33 + _A64 * k43 + _A65 * k53)
        k60 = s * w2
        k61 = s * w3
        k62 = -re * w0 - da * w2
        k63 = -re * w1 - da * w3

        n0 = y0 + h * (_B1 * k10 + _B3 * k30 + _B4 * k40 + _B5 * k50 + _B6 * k60)
        n1 = y1 + h * (_B1 * k11 + _B3 * k31 + _B4 * k41 + _B5 * k51 + _B6 * k61)
        n2 = y2 + h * (_B1 * k12 + _B3 * k32 + _B4 * k42 + _B5 * k52 + _B6 * k62)
        n3 = y3 + h * (_B1 * k13 + _B3 * k33 + _B4 * k43 + _B5 * k53 + _B6 * k63)

        k70 = s * n2
        k71 = s * n3
        k72 = -re * n0 - da * n2
        k73 = -re * n1 - da * n3

        e0 = h * (_E1 * k10 + _E3 * k30 + _E4 * k40 + _E5 * k50 + _E6 * k60 + _E7 * k70)
        e1 = h * (_E1 * k11 + _E3 * k31 + _E4 * k41 + _E5 * k51 + _E6 * k61 + _E7 * k71)
        e2 = h * (_E1 * k12 + _E3 * k32 + _E4 * k42 + _E5 * k52 + _E6 * k62 + _E7 * k72)
        e3 = h * (_E1 * k13 + _E3 * k33 + _E4 * k43 + _E5 * k53 + _E6 * k63 + _E7 * k73)

        s0 = atol + rtol * max(abs(y0), abs(n0))
        s1 = atol + rtol * max(abs(y1), abs(n1))
        s2 = atol + rtol * max(abs(y2), abs(n2))
        s3 = atol + rtol * max(abs(y3), abs(n3))
        err = math.sqrt(
            0.25
            * (
                (e0 / s0) ** 2
                + (e1 / s1) ** 2
                + (e2 / s2) ** 2
                + (e3 / s3) ** 2
            )
        )

        if err <= 1.0:
            t += h
            y0, y1, y2, y3 = n0, n1, n2, n3
            k10, k11, k12, k13 = k70, k71, k72, k73
            accepted += 1
            err_acc += err * 0.25 * (s0 + s1 + s2 + s3)
            if err == 0.0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * err**-0.2
                if factor > MAX_FACTOR:
                    factor = MAX_FACTOR
                elif factor < MIN_FACTOR:
                    factor = MIN_FACTOR
            h *= factor
            if h > max_step:
                h = max_step
        else:
            factor = SAFETY * err**-0.2
            if factor < MIN_FACTOR:
                factor = MIN_FACTOR
            h *= factor
            rejected += 1

    return y0, y1, y2, y3, accepted, rejected, err_acc, status


@njit(cache=True)
def dp45_trig(
    d_cc,
    d_sc,
    d_nu,
    d_ph,
    r_cc,
    r_sc,
    r_nu,
    r_ph,
    sign,
    span,
    y0,
    y1,
    y2,
    y3,
    rtol,
    atol,
    max_step,
):
    """Integrate over [0, span] with trig-polynomial coefficients of time."""
    s = sign
    two_pi = 2.0 * math.pi

    t = 0.0
    h = max_step if max_step < span else span
    accepted = 0
    rejected = 0
    err_acc = 0.0
    status = 0
    h_floor = 1e-13 * span + 1e-290

    def coeffs(tau):
        da = 0.0
        for i in range(d_cc.shape[0]):
            ph = two_pi * (d_ph[i] + d_nu[i] * tau)
            da += d_cc[i] * math.cos(ph) + d_sc[i] * math.sin(ph)
        re = 0.0
        for i in range(r_cc.shape[0]):
            ph = two_pi * (r_ph[i] + r_nu[i] * tau)
            re += r_cc[i] * math.cos(ph) + r_sc[i] * math.sin(ph)
        return da, re

    da, re = coeffs(0.0)
    k10 = s * y2
    k11 = s * y3
    k12 = s * (-re * y0 - da * y2)
    k13 = s * (-re * y1 - da * y3)

    while True:
        remaining = span - t
        if remaining <= h_floor:
            break
        if h > remaining:
            h = remaining
        if h < h_floor:
            status = 1
            break

        w0 = y0 + h * _A21 * k10
        w1 = y1 + h * _A21 * k11
        w2 = y2 + h * _A21 * k12
        w3 = y3 + h * _A21 * k13
        da, re = coeffs(t + _C2 * h)
        k20 = s * w2
        k21 = s * w3
        k22 = s * (-re * w0 - da * w2)
        k23 = s * (-re * w1 - da * w3)

        w0 = y0 + h * (_A31 * k10 + _A32 * k20)
        w1 = y1 + h * (_A31 * k11 + _A32 * k21)
        w2 = y2 + h * (_A31 * k12 + _A32 * k22)
        w3 = y3 + h * (_A31 * k13 + _A32 * k23)
        da, re = coeffs(t + _C3 * h)
        k30 = s * w2
        k31 = s * w3
        k32 = s * (-re * w0 - da * w2)
        k33 = s * (-re * w1 - da * w3)

        w0 = y0 + h * (_A41 * k10 + _A42 * k20 + _A43 * k30)
        w1 = y1 + h * (_A41 * k11 + _A42 * k21 + _A43 * k31)
        w2 = y2 + h * (_A41 * k12 + _A42 * k22 + _A43 * k32)
        w3 = y3 + h * (_A41 * k13 + _A42 * k23 + _A43 * k33)
        da, re = coeffs(t + _C4 * h)
        k40 = s * w2
        k41 = s * w3
        k42 = s * (-re * w0 - da * w2)
        k43 = s * (-re * w1 - da * w3)

        w0 = y0 + h * (_A51 * k10 + _A52 * k20 + _A53 * k30 + _A54 * k40)
        w1 = y1 + h * (_A51 * k11 + _A52 * k21 + _A53 * k31 + _A54 * k41)
        w2 = y2 + h * (_A51 * k12 + _A52 * k22 + _A53 * k32 + _A54 * k42)
        w3 = y3 + h * (_A51 * k13 + _A52 * k23 + _A53 * k33 + _A54 * k43)
        da, re = coeffs(t + _C5 * h)
        k50 = s * w2
        k51 = s * w3
        k52 = s * (-re * w0 - da * w2)
        k53 = s * (-re * w1 - da * w3)

        w0 = y0 + h * (_A61 * k10 + _A62 * k20 + _A63 * k30 + _A64 * k40 + _A65 * k50)
        w1 = y1 + h * (_A61 * k11 + _A62 * k21 + _A63 * k31 + _A64 * k41 + _A65 * k51)
        w2 = y2 + h * (_A61 * k12 + _A62 * k22 + _A63 * k32 + _A64 * k42 + _A65 * k52)
        w3 = y3 + h * (_A61 * k13 + _A62 * k23 + _A63 * k33 + _A64 * k43 + _A65 * k53)
        da, re = coeffs(t + h)
        k60 = s * w2
        k61 = s * w3
        k62 = s * (-re * w0 - da * w2)
        k63 = s * (-re * w1 - da * w3)

        n0 = y0 + h * (_B1 * k10 + _B3 * k30 + _B4 * k40 + _B5 * k50 + _B6 * k60)
        n1 = y1 + h * (_B1 * k11 + _B3 * k31 + _B4 * k41 + _B5 * k51 + _B6 * k61)
        n2 = y2 + h * (_B1 * k12 + _B3 * k32 + _B4 * k42 + _B5 * k52 + _B6 * k62)
        n3 = y3 + h * (_B1 * k13 + _B3 * k33 + _B4 * k43 + _B5 * k53 + _B6 * k63)

        # same time as stage six, coefficients reusable
        k70 = s * n2
        k71 = s * n3
        k72 = s * (-re * n0 - da * n2)
        k73 = s * (-re * n1 - da * n3)

        e0 = h * (_E1 * k10 + _E3 * k30 + _E4 * k40 + _E5 * k50 + _E6 * k60 + _E7 * k70)
        e1 = h * (_E1 * k11 + _E3 * k31 + _E4 * k41 + _E5 * k51 + _E6 * k61 + _E7 * k71)
        e2 = h * (_E1 * k12 + _E3 * k32 + _E4 * k42 + _E5 * k52 + _E6 * k62 + _E7 * k72)
        e3 = h * (_E1 * k13 + _E3 * k33 + _E4 * k43 + _E5 * k53 + _E6 * k63 + _E7 * k73)

        s0 = atol + rtol * max(abs(y0), abs(n0))
        s1 = atol + rtol * max(abs(y1), abs(n1))
        s2 = atol + rtol * max(abs(y2), abs(n2))
        s3 = atol + rtol * max(abs(y3), abs(n3))
        err = math.sqrt(
            0.25
            * (
                (e0 / s0) ** 2
                + (e1 / s1) ** 2
                + (e2 / s2) ** 2
                + (e3 / s3) ** 2
            )
        )

        if err <= 1.0:
            t += h
            y0, y1, y2, y3 = n0, n1, n2, n3
            k10, k11, k12, k13 = k70, k71, k72, k73
            accepted += 1
            err_acc += err * 0.25 * (s0 + s1 + s2 + s3)
            if err == 0.0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * err**-0.2
                if factor > MAX_FACTOR:
                    factor = MAX_FACTOR
                elif factor < MIN_FACTOR:
                    factor = MIN_FACTOR
            h *= factor
            if h > max_step:
                h = max_step
        else:
            factor = SAFETY * err**-0.2
            if factor < MIN_FACTOR:
                factor = MIN_FACTOR
            h *= factor
            rejected += 1

    return y0, y1, y2, y3, accepted, rejected, err_acc, status
