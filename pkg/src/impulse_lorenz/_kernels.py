"""Specialized integration and section-geometry kernels.

Scalar-arithmetic twins of the `_rk` reference engine, restricted to the
shifted Lorenz field so they can be jit-compiled. Same Butcher tableau,
same error norm, same controller; the two engines agree to integration
tolerance and tests cross-check them. Everything here is forward-time.

Crossing localization contract: dense output of every accepted step is
scanned at spacing max_step/4, a sign bracket is shrunk by bisection to
the crossing tolerance, then polished with one safeguarded secant step.

Status codes shared by the drivers:
  0 success
  1 time limit reached without the requested crossing
  2 step size collapsed (stiffness)
  3 trajectory diverged
  4 point has no usable leaf component (y1 too close to 0)
  5 point is off the section surface
  6 coordinate outside the leaf arc / leaf window is empty

Chart convention: a leaf of the section foliation is the connected arc,
selected by the inward-crossing gate, of the curve {C = r} ∩ {g = 0} on
one side of the y1 = 0 plane. Each arc is a graph over y3 on a single
sign branch (y1, y2 both carry the component sign), so the chart value
v is the exact arclength from the low-y3 arc endpoint, evaluated by
Gauss-Legendre quadrature under the substitution y3 = c + d sin(psi)
that removes the square-root endpoint singularities. The inverse solves
for y3 by bracketed Newton on the same quadrature, which is what makes
round trips reproducible to solver tolerance.
"""
from __future__ import annotations

import math

import numpy as np

from ._rk import (
    A21, A31, A32, A41, A42, A43, A51, A52, A53, A54,
    A61, A62, A63, A64, A65,
    B1, B3, B4, B5, B6,
    C2, C3, C4, C5,
    E1, E3, E4, E5, E6, E7,
    MIN_STEP_FRACTION,
    P_DENSE,
)

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(func):
            return func

        return deco


_jit = njit(cache=True, fastmath=False)

# Dense-output polynomial entries (column 0 is the identity in k1).
_P01 = float(P_DENSE[0, 1])
_P02 = float(P_DENSE[0, 2])
_P03 = float(P_DENSE[0, 3])
_P21 = float(P_DENSE[2, 1])
_P22 = float(P_DENSE[2, 2])
_P23 = float(P_DENSE[2, 3])
_P31 = float(P_DENSE[3, 1])
_P32 = float(P_DENSE[3, 2])
_P33 = float(P_DENSE[3, 3])
_P41 = float(P_DENSE[4, 1])
_P42 = float(P_DENSE[4, 2])
_P43 = float(P_DENSE[4, 3])
_P51 = float(P_DENSE[5, 1])
_P52 = float(P_DENSE[5, 2])
_P53 = float(P_DENSE[5, 3])
_P61 = float(P_DENSE[6, 1])
_P62 = float(P_DENSE[6, 2])
_P63 = float(P_DENSE[6, 3])

_DIVERGENCE_RADIUS_SQ = 1.0e10

_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)
_ARC_PANELS = 4
_ENDPOINT_SCAN = 128
_BISECT_ITERS = 64

# Field perturbation modes (must match vector_fields.PerturbationMode order).
MODE_NONE = 0
MODE_CONSTANT = 1
MODE_LOCALIZED = 2

# Section codes: 0 planar {y3 = pz}, 1 Casimir-extremum surface {g = 0}.
SECTION_PLANAR = 0
SECTION_CASIMIR = 1


@_jit
def _field(y0, y1, y2, ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz):
    f0 = -ze * (y0 - y1)
    f1 = -y0 * y2 - ze * y0 - y1
    f2 = y0 * y1 - be * y2 - be * (ga + ze)
    if mode == MODE_CONSTANT:
        f0 += eta * hx
        f1 += eta * hy
        f2 += eta * hz
    elif mode == MODE_LOCALIZED:
        if sec == SECTION_PLANAR:
            d = y2 - pz
        else:
            d = -2.0 * (ze * y0 * y0 + y1 * y1 + be * y2 * y2
                        + be * (ga + ze) * y2)
        x = d / bw
        if x > -1.0 and x < 1.0:
            w = 1.0 - x * x
            fac = eta * w * w * w
            f0 += fac * hx
            f1 += fac * hy
            f2 += fac * hz
    return f0, f1, f2


@_jit
def _section_value(y0, y1, y2, ze, ga, be, sec, pz):
    if sec == SECTION_PLANAR:
        return y2 - pz
    return -2.0 * (ze * y0 * y0 + y1 * y1 + be * y2 * y2
                   + be * (ga + ze) * y2)


@_jit
def _step(t, y0, y1, y2, h, k10, k11, k12,
          ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz):
    """One Dormand-Prince step; returns stage slopes, solution and error."""
    a0 = y0 + h * (A21 * k10)
    a1 = y1 + h * (A21 * k11)
    a2 = y2 + h * (A21 * k12)
    k20, k21, k22 = _field(a0, a1, a2, ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz)

    a0 = y0 + h * (A31 * k10 + A32 * k20)
    a1 = y1 + h * (A31 * k11 + A32 * k21)
    a2 = y2 + h * (A31 * k12 + A32 * k22)
    k30, k31, k32 = _field(a0, a1, a2, ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz)

    a0 = y0 + h * (A41 * k10 + A42 * k20 + A43 * k30)
    a1 = y1 + h * (A41 * k11 + A42 * k21 + A43 * k31)
    a2 = y2 + h * (A41 * k12 + A42 * k22 + A43 * k32)
    k40, k41, k42 = _field(a0, a1, a2, ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz)

    a0 = y0 + h * (A51 * k10 + A52 * k20 + A53 * k30 + A54 * k40)
    a1 = y1 + h * (A51 * k11 + A52 * k21 + A53 * k31 + A54 * k41)
    a2 = y2 + h * (A51 * k12 + A52 * k22 + A53 * k32 + A54 * k42)
    k50, k51, k52 = _field(a0, a1, a2, ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz)

    a0 = y0 + h * (A61 * k10 + A62 * k20 + A63 * k30 + A64 * k40 + A65 * k50)
    a1 = y1 + h * (A61 * k11 + A62 * k21 + A63 * k31 + A64 * k41 + A65 * k51)
    a2 = y2 + h * (A61 * k12 + A62 * k22 + A63 * k32 + A64 * k42 + A65 * k52)
    k60, k61, k62 = _field(a0, a1, a2, ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz)

    z0 = y0 + h * (B1 * k10 + B3 * k30 + B4 * k40 + B5 * k50 + B6 * k60)
    z1 = y1 + h * (B1 * k11 + B3 * k31 + B4 * k41 + B5 * k51 + B6 * k61)
    z2 = y2 + h * (B1 * k12 + B3 * k32 + B4 * k42 + B5 * k52 + B6 * k62)
    k70, k71, k72 = _field(z0, z1, z2, ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz)

    e0 = h * (E1 * k10 + E3 * k30 + E4 * k40 + E5 * k50 + E6 * k60 + E7 * k70)
    e1 = h * (E1 * k11 + E3 * k31 + E4 * k41 + E5 * k51 + E6 * k61 + E7 * k71)
    e2 = h * (E1 * k12 + E3 * k32 + E4 * k42 + E5 * k52 + E6 * k62 + E7 * k72)

    return (z0, z1, z2, k70, k71, k72, e0, e1, e2,
            k20, k21, k22, k30, k31, k32, k40, k41, k42,
            k50, k51, k52, k60, k61, k62)


@_jit
def _dense_coeffs(k10, k11, k12, k30, k31, k32, k40, k41, k42,
                  k50, k51, k52, k60, k61, k62, k70, k71, k72):
    """Quartic coefficients (per component, powers 1..4 of the step fraction)."""
    q01 = k10  # power-1 column of the extension matrix is k1 alone
    q11 = k11
    q21 = k12
    q02 = _P01 * k10 + _P21 * k30 + _P31 * k40 + _P41 * k50 + _P51 * k60 + _P61 * k70
    q12 = _P01 * k11 + _P21 * k31 + _P31 * k41 + _P41 * k51 + _P51 * k61 + _P61 * k71
    q22 = _P01 * k12 + _P21 * k32 + _P31 * k42 + _P41 * k52 + _P51 * k62 + _P61 * k72
    q03 = _P02 * k10 + _P22 * k30 + _P32 * k40 + _P42 * k50 + _P52 * k60 + _P62 * k70
    q13 = _P02 * k11 + _P22 * k31 + _P32 * k41 + _P42 * k51 + _P52 * k61 + _P62 * k71
    q23 = _P02 * k12 + _P22 * k32 + _P32 * k42 + _P42 * k52 + _P52 * k62 + _P62 * k72
    q04 = _P03 * k10 + _P23 * k30 + _P33 * k40 + _P43 * k50 + _P53 * k60 + _P63 * k70
    q14 = _P03 * k11 + _P23 * k31 + _P33 * k41 + _P43 * k51 + _P53 * k61 + _P63 * k71
    q24 = _P03 * k12 + _P23 * k32 + _P33 * k42 + _P43 * k52 + _P53 * k62 + _P63 * k72
    return (q01, q11, q21, q02, q12, q22, q03, q13, q23, q04, q14, q24)


@_jit
def _dense_eval(y0, y1, y2, h, x,
                q01, q11, q21, q02, q12, q22, q03, q13, q23, q04, q14, q24):
    u0 = x * (q01 + x * (q02 + x * (q03 + x * q04)))
    u1 = x * (q11 + x * (q12 + x * (q13 + x * q14)))
    u2 = x * (q21 + x * (q22 + x * (q23 + x * q24)))
    return y0 + h * u0, y1 + h * u1, y2 + h * u2


@_jit
def advance(y0, y1, y2, t0, t1,
            ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz,
            rtol, atol, max_step):
    """Integrate forward from t0 to t1. Returns (status, t, y0, y1, y2)."""
    if t1 <= t0:
        return 0, t0, y0, y1, y2
    t = t0
    h = max_step
    if t1 - t0 < h:
        h = t1 - t0
    if 0.01 < h:
        h = 0.01
    k10, k11, k12 = _field(y0, y1, y2, ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz)
    while True:
        lim = MIN_STEP_FRACTION * (1.0 if abs(t) < 1.0 else abs(t))
        if t1 - t <= lim:
            return 0, t1, y0, y1, y2
        if h > max_step:
            h = max_step
        if h > t1 - t:
            h = t1 - t
        if h < lim:
            return 2, t, y0, y1, y2
        out = _step(t, y0, y1, y2, h, k10, k11, k12,
                    ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz)
        z0, z1, z2 = out[0], out[1], out[2]
        k70, k71, k72 = out[3], out[4], out[5]
        e0, e1, e2 = out[6], out[7], out[8]
        s0 = atol + rtol * max(abs(y0), abs(z0))
        s1 = atol + rtol * max(abs(y1), abs(z1))
        s2 = atol + rtol * max(abs(y2), abs(z2))
        r0 = e0 / s0
        r1 = e1 / s1
        r2 = e2 / s2
        err = math.sqrt((r0 * r0 + r1 * r1 + r2 * r2) / 3.0)
        if err <= 1.0:
            t += h
            y0, y1, y2 = z0, z1, z2
            k10, k11, k12 = k70, k71, k72
            if y0 * y0 + y1 * y1 + y2 * y2 > _DIVERGENCE_RADIUS_SQ:
                return 3, t, y0, y1, y2
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            h *= fac
        else:
            h *= max(0.2, 0.9 * err ** -0.2)


@_jit
def collect_states(y0, y1, y2, ts, out,
                   ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz,
                   rtol, atol, max_step):
    """States at sorted times ts (ts[0] is the start time). Fills out (n, 3)."""
    n = ts.shape[0]
    out[0, 0] = y0
    out[0, 1] = y1
    out[0, 2] = y2
    if n == 1:
        return 0
    idx = 1
    t = ts[0]
    t1 = ts[n - 1]
    h = max_step
    if t1 - t < h:
        h = t1 - t
    if 0.01 < h:
        h = 0.01
    k10, k11, k12 = _field(y0, y1, y2, ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz)
    while True:
        lim = MIN_STEP_FRACTION * (1.0 if abs(t) < 1.0 else abs(t))
        if t1 - t <= lim:
            break
        if h > max_step:
            h = max_step
        if h > t1 - t:
            h = t1 - t
        if h < lim:
            return 2
        out_s = _step(t, y0, y1, y2, h, k10, k11, k12,
                      ze, ga, be, mode, eta, hx, hy, hz, bw, sec, pz)
        z0, z1, z2 = out_s[0], out_s[1], out_s[2]
        k70, k71, k72 = out_s[3], out_s[4], out_s[5]
        e0, e1, e2 = out_s[6], out_s[7], out_s[8]
        s0 = atol + rtol * max(abs(y0), abs(z0))
        s1 = atol + rtol * max(abs(y1), abs(z1))
        s2 = atol + rtol * max(abs(y2), abs(z2))
        r0 = e0 / s0
        r1 = e1 / s1
        r2 = e2 / s2
        err = math.sqrt((r0 * r0 + r1 * r1 + r2 * r2) / 3.0)
        if err <= 1.0:
            q = _dense_coeffs(k10, k11, k12,
                              out_s[12], out_s[13], out_s[14],
                              out_s[15], out_s[16], out_s[17],
                              out_s[18], out_s[19], out_s[20],
                              out_s[21], out_s[22], out_s[23],
                              k70, k71, k72)
            while idx < n and ts[idx] <= t + h + 1e-15:
                x = (ts[idx] - t) / h
                if x > 1.0:
                    x = 1.0
                w0, w1, w2 = _dense_eval(y0, y1, y2, h, x,
                                         q[0], q[1], q[2], q[3], q[4], q[5],
                                         q[6], q[7], q[8], q[9], q[10], q[11])
                out[idx, 0] = w0
                out[idx, 1] = w1
                out[idx, 2] = w2
                idx += 1
            t += h
            y0, y1, y2 = z0, z1, z2
            k10, k11, k12 = k70, k71, k72
            if y0 * y0 + y1 * y1 + y2 * y2 > _DIVERGENCE_RADIUS_SQ:
                return 3
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            h *= fac
        else:
            h *= max(0.2, 0.9 * err ** -0.2)
    while idx < n:
        out[idx, 0] = y0
        out[idx, 1] = y1
        out[idx, 2] = y2
        idx += 1
    return 0


@_jit
def next_crossing(y0, y1, y2, t_start, t_limit,
                  ze, ga, be, mode, eta, hx, hy, hz, bw, fsec, fpz,
                  sec, pz, direction, half_width, need_inside,
                  o11, o21, o12, o22,
                  rtol, atol, max_step, crossing_tol):
    """First section crossing after t_start in the requested direction.

    direction -1: section value decreasing through zero; +1 increasing;
    0 either. With half_width > 0 the crossing point is tested against
    the square |o11 y1 + o21 y2| <= half_width, |o12 y1 + o22 y2| <=
    half_width in the rotated in-plane coordinates; the result is the
    returned `inside` flag, and with need_inside nonzero crossings
    outside the square are skipped instead of reported.

    Returns (status, t_cross, y0, y1, y2, sdot, inside).
    """
    t = t_start
    s_prev = _section_value(y0, y1, y2, ze, ga, be, sec, pz)
    h = max_step
    if t_limit - t < h:
        h = t_limit - t
    if 0.01 < h:
        h = 0.01
    scan_dt = 0.25 * max_step
    k10, k11, k12 = _field(y0, y1, y2, ze, ga, be, mode, eta, hx, hy, hz, bw, fsec, fpz)
    # Hysteresis: a start within refinement slop of the surface must leave a
    # neighborhood scaled by |ds/dt| before sign changes count as crossings.
    if sec == SECTION_PLANAR:
        sdot0 = k12
    else:
        gg0 = -(2.0 * ze * y0)
        gg1 = -(2.0 * y1)
        gg2 = -(2.0 * be * y2 + be * (ga + ze))
        sdot0 = 2.0 * (gg0 * k10 + gg1 * k11 + gg2 * k12)
    s_arm = 100.0 * (abs(sdot0) + 1.0) * crossing_tol
    armed = 1 if abs(s_prev) > s_arm else 0
    while t < t_limit:
        if h > max_step:
            h = max_step
        if h > t_limit - t:
            h = t_limit - t
        lim = MIN_STEP_FRACTION * (1.0 if abs(t) < 1.0 else abs(t))
        if h < lim:
            return 2, t, y0, y1, y2, 0.0, 0
        out = _step(t, y0, y1, y2, h, k10, k11, k12,
                    ze, ga, be, mode, eta, hx, hy, hz, bw, fsec, fpz)
        z0, z1, z2 = out[0], out[1], out[2]
        k70, k71, k72 = out[3], out[4], out[5]
        e0, e1, e2 = out[6], out[7], out[8]
        sc0 = atol + rtol * max(abs(y0), abs(z0))
        sc1 = atol + rtol * max(abs(y1), abs(z1))
        sc2 = atol + rtol * max(abs(y2), abs(z2))
        r0 = e0 / sc0
        r1 = e1 / sc1
        r2 = e2 / sc2
        err = math.sqrt((r0 * r0 + r1 * r1 + r2 * r2) / 3.0)
        if err <= 1.0:
            q = _dense_coeffs(k10, k11, k12,
                              out[12], out[13], out[14],
                              out[15], out[16], out[17],
                              out[18], out[19], out[20],
                              out[21], out[22], out[23],
                              k70, k71, k72)
            n_sub = int(h / scan_dt) + 1
            if n_sub < 2:
                n_sub = 2
            x_prev = 0.0
            for j in range(1, n_sub + 1):
                x_cur = j / n_sub
                if j == n_sub:
                    s_cur = _section_value(z0, z1, z2, ze, ga, be, sec, pz)
                else:
                    w0, w1, w2 = _dense_eval(
                        y0, y1, y2, h, x_cur,
                        q[0], q[1], q[2], q[3], q[4], q[5],
                        q[6], q[7], q[8], q[9], q[10], q[11])
                    s_cur = _section_value(w0, w1, w2, ze, ga, be, sec, pz)
                hit = 0
                if armed == 1:
                    if direction <= 0 and s_prev > 0.0 and s_cur <= 0.0:
                        hit = 1
                    elif direction >= 0 and s_prev < 0.0 and s_cur >= 0.0:
                        hit = 1
                if hit == 1:
                    xa = x_prev
                    xb = x_cur
                    sa = s_prev
                    sb = s_cur
                    while (xb - xa) * h > crossing_tol:
                        xm = 0.5 * (xa + xb)
                        w0, w1, w2 = _dense_eval(
                            y0, y1, y2, h, xm,
                            q[0], q[1], q[2], q[3], q[4], q[5],
                            q[6], q[7], q[8], q[9], q[10], q[11])
                        sm = _section_value(w0, w1, w2, ze, ga, be, sec, pz)
                        same_side = (sm > 0.0) == (sa > 0.0)
                        if same_side:
                            xa = xm
                            sa = sm
                        else:
                            xb = xm
                            sb = sm
                    if sa != sb:
                        xs = xa + sa * (xb - xa) / (sa - sb)
                        if xs < xa:
                            xs = xa
                        elif xs > xb:
                            xs = xb
                    else:
                        xs = 0.5 * (xa + xb)
                    w0, w1, w2 = _dense_eval(
                        y0, y1, y2, h, xs,
                        q[0], q[1], q[2], q[3], q[4], q[5],
                        q[6], q[7], q[8], q[9], q[10], q[11])
                    tc = t + xs * h
                    if tc <= t_limit:
                        inside = 1
                        if half_width > 0.0:
                            u1 = o11 * w0 + o21 * w1
                            u2 = o12 * w0 + o22 * w1
                            if abs(u1) > half_width or abs(u2) > half_width:
                                inside = 0
                        if inside == 1 or need_inside == 0:
                            f0, f1, f2 = _field(w0, w1, w2, ze, ga, be, mode,
                                                eta, hx, hy, hz, bw, fsec, fpz)
                            if sec == SECTION_PLANAR:
                                sdot = f2
                            else:
                                gg0 = -(2.0 * ze * w0)
                                gg1 = -(2.0 * w1)
                                gg2 = -(2.0 * be * w2 + be * (ga + ze))
                                sdot = 2.0 * (gg0 * f0 + gg1 * f1 + gg2 * f2)
                            return 0, tc, w0, w1, w2, sdot, inside
                if armed == 0 and abs(s_cur) > s_arm:
                    armed = 1
                s_prev = s_cur
                x_prev = x_cur
            t += h
            y0, y1, y2 = z0, z1, z2
            k10, k11, k12 = k70, k71, k72
            if y0 * y0 + y1 * y1 + y2 * y2 > _DIVERGENCE_RADIUS_SQ:
                return 3, t, y0, y1, y2, 0.0, 0
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            h *= fac
        else:
            h *= max(0.2, 0.9 * err ** -0.2)
    return 1, t, y0, y1, y2, 0.0, 0


@_jit
def crossing_chain(y0, y1, y2, etas,
                   ze, ga, be, mode, hx, hy, hz, bw, fsec, fpz,
                   sec, pz, direction, half_width, need_inside,
                   o11, o21, o12, o22,
                   rtol, atol, max_step, crossing_tol, max_time,
                   out_hits, out_tau, out_flags):
    """Successive crossings, one noise value per inter-crossing segment.

    Segment k integrates the field with eta = etas[k]. Fills out_hits
    (n, 3), out_tau (n), out_flags (n); returns (status, n_done). The
    clock restarts at each crossing, so max_time bounds single returns.
    """
    n = etas.shape[0]
    for k in range(n):
        res = next_crossing(y0, y1, y2, 0.0, max_time,
                            ze, ga, be, mode, etas[k], hx, hy, hz, bw, fsec, fpz,
                            sec, pz, direction, half_width, need_inside,
                            o11, o21, o12, o22,
                            rtol, atol, max_step, crossing_tol)
        status = res[0]
        if status != 0:
            return status, k
        y0, y1, y2 = res[2], res[3], res[4]
        out_hits[k, 0] = y0
        out_hits[k, 1] = y1
        out_hits[k, 2] = y2
        out_tau[k] = res[1]
        out_flags[k] = res[6]
    return 0, n


# ---------------------------------------------------------------------------
# Leaf charts on the Casimir-extremum surface.
# ---------------------------------------------------------------------------


@_jit
def _leaf_window(r, ze, ga, be):
    """y3 interval where the leaf curve {C=r} ∩ {g=0} exists. (lo, hi, ok)."""
    gz = ga + ze
    # y1^2 >= 0: (be-1) u^2 + be*gz*u + r <= 0
    a1 = be - 1.0
    d1 = be * gz * be * gz - 4.0 * a1 * r
    if d1 <= 0.0 or a1 <= 0.0:
        return 0.0, 0.0, 0
    sq1 = math.sqrt(d1)
    lo1 = (-be * gz - sq1) / (2.0 * a1)
    hi1 = (-be * gz + sq1) / (2.0 * a1)
    # y2^2 >= 0: (ze-be) u^2 - be*gz*u - ze*r <= 0
    a2 = ze - be
    d2 = be * gz * be * gz + 4.0 * a2 * ze * r
    if d2 <= 0.0 or a2 <= 0.0:
        return 0.0, 0.0, 0
    sq2 = math.sqrt(d2)
    lo2 = (be * gz - sq2) / (2.0 * a2)
    hi2 = (be * gz + sq2) / (2.0 * a2)
    lo = lo1 if lo1 > lo2 else lo2
    hi = hi1 if hi1 < hi2 else hi2
    if lo >= hi:
        return 0.0, 0.0, 0
    return lo, hi, 1


@_jit
def _leaf_f1(u, r, ze, ga, be):
    return -((be - 1.0) * u * u + be * (ga + ze) * u + r) / (ze - 1.0)


@_jit
def _leaf_f2(u, r, ze, ga, be):
    return r - u * u - _leaf_f1(u, r, ze, ga, be)


@_jit
def _gate_on_curve(u, r, ze, ga, be):
    """Flow derivative of g along the curve point with positive branch signs."""
    f1 = _leaf_f1(u, r, ze, ga, be)
    f2 = _leaf_f2(u, r, ze, ga, be)
    if f1 < 0.0:
        f1 = 0.0
    if f2 < 0.0:
        f2 = 0.0
    w0 = math.sqrt(f1)
    w1 = math.sqrt(f2)
    gz = ga + ze
    p0 = -ze * (w0 - w1)
    p1 = -w0 * u - ze * w0 - w1
    p2 = w0 * w1 - be * u - be * gz
    g0 = -(2.0 * ze * w0)
    g1 = -(2.0 * w1)
    g2 = -(2.0 * be * u + be * gz)
    return p0 * g0 + p1 * g1 + p2 * g2


@_jit
def _arc_endpoints(r, ze, ga, be):
    """Gate-negative sub-interval of the leaf window. (e_lo, e_hi, ok)."""
    lo, hi, ok = _leaf_window(r, ze, ga, be)
    if ok == 0:
        return 0.0, 0.0, 0
    c = 0.5 * (lo + hi)
    d = 0.5 * (hi - lo)
    n = _ENDPOINT_SCAN
    # longest gate<=0 run over the psi grid
    best_i = -1
    best_j = -1
    cur_i = -1
    for i in range(n + 1):
        psi = -0.5 * math.pi + math.pi * i / n
        u = c + d * math.sin(psi)
        hval = _gate_on_curve(u, r, ze, ga, be)
        if hval <= 0.0:
            if cur_i < 0:
                cur_i = i
            if best_i < 0 or i - cur_i > best_j - best_i:
                best_i = cur_i
                best_j = i
        else:
            cur_i = -1
    if best_i < 0:
        return 0.0, 0.0, 0
    # refine the left edge between grid nodes best_i-1 and best_i
    if best_i == 0:
        e_lo = lo
    else:
        pa = -0.5 * math.pi + math.pi * (best_i - 1) / n
        pb = -0.5 * math.pi + math.pi * best_i / n
        for _ in range(_BISECT_ITERS):
            pm = 0.5 * (pa + pb)
            u = c + d * math.sin(pm)
            if _gate_on_curve(u, r, ze, ga, be) <= 0.0:
                pb = pm
            else:
                pa = pm
        e_lo = c + d * math.sin(pb)
    if best_j == n:
        e_hi = hi
    else:
        pa = -0.5 * math.pi + math.pi * best_j / n
        pb = -0.5 * math.pi + math.pi * (best_j + 1) / n
        for _ in range(_BISECT_ITERS):
            pm = 0.5 * (pa + pb)
            u = c + d * math.sin(pm)
            if _gate_on_curve(u, r, ze, ga, be) <= 0.0:
                pa = pm
            else:
                pb = pm
        e_hi = c + d * math.sin(pa)
    if e_lo >= e_hi:
        return 0.0, 0.0, 0
    return e_lo, e_hi, 1


@_jit
def _arc_speed_psi(psi, c, d, r, ze, ga, be):
    """Arclength integrand in the psi variable (endpoint roots removed)."""
    u = c + d * math.sin(psi)
    f1 = _leaf_f1(u, r, ze, ga, be)
    f2 = _leaf_f2(u, r, ze, ga, be)
    df1 = -(2.0 * (be - 1.0) * u + be * (ga + ze)) / (ze - 1.0)
    df2 = -2.0 * u - df1
    cosp = math.cos(psi)
    # speed^2 * (du/dpsi)^2 with the 1/f roots cancelled analytically where
    # f vanishes at a window edge; clamp tiny negatives from cancellation.
    t1 = 0.0
    if f1 > 1e-300:
        t1 = df1 * df1 / (4.0 * f1)
    t2 = 0.0
    if f2 > 1e-300:
        t2 = df2 * df2 / (4.0 * f2)
    val = (1.0 + t1 + t2) * (d * cosp) * (d * cosp)
    if val < 0.0:
        val = 0.0
    return math.sqrt(val)


@_jit
def _arc_integral(psi_a, psi_b, c, d, r, ze, ga, be):
    if psi_b <= psi_a:
        return 0.0
    total = 0.0
    width = (psi_b - psi_a) / _ARC_PANELS
    for p in range(_ARC_PANELS):
        a = psi_a + p * width
        mid = a + 0.5 * width
        half = 0.5 * width
        acc = 0.0
        for i in range(_GL_X.shape[0]):
            acc += _GL_W[i] * _arc_speed_psi(mid + half * _GL_X[i],
                                             c, d, r, ze, ga, be)
        total += acc * half
    return total


@_jit
def _psi_of(u, c, d):
    x = (u - c) / d
    if x < -1.0:
        x = -1.0
    elif x > 1.0:
        x = 1.0
    return math.asin(x)


@_jit
def leaf_arc(r, ze, ga, be):
    """(status, e_lo, e_hi, length) of the gated arc of leaf r."""
    e_lo, e_hi, ok = _arc_endpoints(r, ze, ga, be)
    if ok == 0:
        return 6, 0.0, 0.0, 0.0
    lo, hi, _ = _leaf_window(r, ze, ga, be)
    c = 0.5 * (lo + hi)
    d = 0.5 * (hi - lo)
    length = _arc_integral(_psi_of(e_lo, c, d), _psi_of(e_hi, c, d),
                           c, d, r, ze, ga, be)
    return 0, e_lo, e_hi, length


@_jit
def to_chart(y0, y1, y2, ze, ga, be, surface_tol):
    """(status, r, v, comp) for a point on the section surface."""
    r = y0 * y0 + y1 * y1 + y2 * y2
    gz = ga + ze
    g = -(ze * y0 * y0 + y1 * y1 + be * y2 * y2 + be * gz * y2)
    if abs(g) > surface_tol * (1.0 + r):
        return 5, r, 0.0, 0
    if y0 > 0.0:
        comp = 1
    elif y0 < 0.0:
        comp = -1
    else:
        return 4, r, 0.0, 0
    e_lo, e_hi, ok = _arc_endpoints(r, ze, ga, be)
    if ok == 0:
        return 6, r, 0.0, comp
    slack = 1e-7 * (1.0 + abs(e_hi - e_lo))
    u = y2
    if u < e_lo - slack or u > e_hi + slack:
        return 6, r, 0.0, comp
    if u < e_lo:
        u = e_lo
    elif u > e_hi:
        u = e_hi
    lo, hi, _ = _leaf_window(r, ze, ga, be)
    c = 0.5 * (lo + hi)
    d = 0.5 * (hi - lo)
    v = _arc_integral(_psi_of(e_lo, c, d), _psi_of(u, c, d), c, d, r, ze, ga, be)
    return 0, r, v, comp


@_jit
def to_ambient(r, v, comp, ze, ga, be):
    """(status, y0, y1, y2) of the arc point at arclength v on leaf r."""
    e_lo, e_hi, ok = _arc_endpoints(r, ze, ga, be)
    if ok == 0:
        return 6, 0.0, 0.0, 0.0
    lo, hi, _ = _leaf_window(r, ze, ga, be)
    c = 0.5 * (lo + hi)
    d = 0.5 * (hi - lo)
    psi_lo = _psi_of(e_lo, c, d)
    length = _arc_integral(psi_lo, _psi_of(e_hi, c, d), c, d, r, ze, ga, be)
    vtol = 1e-7 * (1.0 + length)
    if v < -vtol or v > length + vtol:
        return 6, 0.0, 0.0, 0.0
    if v < 0.0:
        v = 0.0
    elif v > length:
        v = length
    # bracketed Newton for y3 with v(y3) from the same quadrature
    ua = e_lo
    ub = e_hi
    u = 0.5 * (e_lo + e_hi)
    for _ in range(100):
        fv = _arc_integral(psi_lo, _psi_of(u, c, d), c, d, r, ze, ga, be) - v
        if abs(fv) <= 1e-13 * (1.0 + length):
            break
        if fv > 0.0:
            ub = u
        else:
            ua = u
        f1 = _leaf_f1(u, r, ze, ga, be)
        f2 = _leaf_f2(u, r, ze, ga, be)
        df1 = -(2.0 * (be - 1.0) * u + be * (ga + ze)) / (ze - 1.0)
        df2 = -2.0 * u - df1
        t1 = df1 * df1 / (4.0 * f1) if f1 > 1e-300 else 0.0
        t2 = df2 * df2 / (4.0 * f2) if f2 > 1e-300 else 0.0
        speed = math.sqrt(1.0 + t1 + t2)
        step = fv / speed
        un = u - step
        if un <= ua or un >= ub:
            un = 0.5 * (ua + ub)
        if abs(un - u) < 4e-16 * (1.0 + abs(u)):
            u = un
            break
        u = un
    f1 = _leaf_f1(u, r, ze, ga, be)
    f2 = _leaf_f2(u, r, ze, ga, be)
    if f1 < 0.0:
        f1 = 0.0
    if f2 < 0.0:
        f2 = 0.0
    sgn = 1.0 if comp >= 0 else -1.0
    return 0, sgn * math.sqrt(f1), sgn * math.sqrt(f2), u


@_jit
def chart_batch(pts, ze, ga, be, surface_tol, out_r, out_v, out_comp):
    """to_chart over rows of pts; returns count of failed rows (status -> comp 0)."""
    n = pts.shape[0]
    bad = 0
    for i in range(n):
        status, r, v, comp = to_chart(pts[i, 0], pts[i, 1], pts[i, 2],
                                      ze, ga, be, surface_tol)
        out_r[i] = r
        out_v[i] = v
        if status == 0:
            out_comp[i] = comp
        else:
            out_comp[i] = 0
            bad += 1
    return bad
