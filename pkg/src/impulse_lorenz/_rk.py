"""Reference Dormand-Prince 5(4) engine with continuous output.

Pure-numpy, callable-based twin of the specialized kernels in `_kernels`.
Both implementations share the same Butcher tableau, the same error norm,
and the same step-size controller, so trajectories agree to integration
tolerance; tests cross-check them. This engine is the one used with
arbitrary right-hand sides (oracle problems, reversed-time integration).

Step control: scaled RMS error norm with per-component scale
atol + rtol*max(|y0|, |y1|); accept when the norm is <= 1; step factor
0.9 * err^(-1/5) clipped to [0.2, 5.0]; first-same-as-last stage reuse.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, DomainError, StiffnessError

# Classic Dormand-Prince coefficients (5th order solution, 4th order error).
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0

A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)

B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0

E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)

# Continuous-extension polynomial matrix: y(t0 + th) = y0 + h * K^T P [t,t^2,t^3,t^4].
P_DENSE = np.array(
    [
        [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
        [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
        [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
        [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
        [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
    ]
)

MIN_STEP_FRACTION = 1e-14  # of max(1, |t|); below this the problem is declared stiff
DIVERGENCE_RADIUS_SQ = 1e10  # |y|^2 beyond this the orbit is declared escaped


class DenseSegment:
    """Quartic interpolant over one accepted step [t0, t0+h] (h may be < 0)."""

    __slots__ = ("t0", "h", "y0", "q")

    def __init__(self, t0: float, h: float, y0: np.ndarray, K: np.ndarray):
        self.t0 = t0
        self.h = h
        self.y0 = y0
        self.q = K.T @ P_DENSE  # (n, 4)

    @property
    def t1(self) -> float:
        return self.t0 + self.h

    def __call__(self, t: float) -> np.ndarray:
        x = (t - self.t0) / self.h
        powers = np.array([x, x * x, x ** 3, x ** 4])
        return self.y0 + self.h * (self.q @ powers)


def _single_step(rhs: Callable, t: float, y: np.ndarray, h: float, k1: np.ndarray):
    k2 = rhs(t + C2 * h, y + h * (A21 * k1))
    k3 = rhs(t + C3 * h, y + h * (A31 * k1 + A32 * k2))
    k4 = rhs(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))
    k5 = rhs(t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
    k6 = rhs(t + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
    y1 = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
    k7 = rhs(t + h, y1)
    err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
    K = np.stack([k1, k2, k3, k4, k5, k6, k7])
    return y1, k7, err, K


def advance(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t0: float,
    t1: float,
    *,
    rtol: float = 1e-9,
    atol: float = 1e-11,
    max_step: float = 0.25,
    on_segment: Optional[Callable[[DenseSegment], Optional[float]]] = None,
    first_step: Optional[float] = None,
):
    """Integrate from t0 to t1 (either direction), returning (t_end, y_end).

    `on_segment`, when given, is called with the dense interpolant of every
    accepted step; returning a float t_stop inside the segment truncates the
    integration there (used by crossing localization), returning None
    continues. The final state is then the interpolant at t_stop.
    """
    y = np.asarray(y0, dtype=float).copy()
    if t1 == t0:
        return t0, y
    direction = 1.0 if t1 > t0 else -1.0
    if not max_step > 0:
        raise DomainError("max_step must be positive")
    h = direction * min(max_step, abs(t1 - t0), first_step if first_step else 0.01)
    t = t0
    k1 = rhs(t, y)
    while (t1 - t) * direction > MIN_STEP_FRACTION * max(1.0, abs(t)):
        h = direction * min(abs(h), max_step, abs(t1 - t))
        if abs(h) < MIN_STEP_FRACTION * max(1.0, abs(t)):
            raise StiffnessError(f"step size collapsed at t={t:.6g}")
        y1, k7, err, K = _single_step(rhs, t, y, h, k1)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y1))
        err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
        if err_norm <= 1.0:
            seg = DenseSegment(t, h, y.copy(), K)
            if on_segment is not None:
                t_stop = on_segment(seg)
                if t_stop is not None:
                    return t_stop, seg(t_stop)
            t += h
            y = y1
            k1 = k7
            if float(y @ y) > DIVERGENCE_RADIUS_SQ:
                raise DivergenceError(f"orbit escaped (|y| > 1e5) at t={t:.6g}")
            factor = 5.0 if err_norm == 0.0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
            h *= factor
        else:
            h *= max(0.2, 0.9 * err_norm ** -0.2)
    return t1, y


def advance_collect(
    rhs: Callable,
    y0: np.ndarray,
    t_eval: np.ndarray,
    *,
    rtol: float = 1e-9,
    atol: float = 1e-11,
    max_step: float = 0.25,
) -> np.ndarray:
    """States at the (sorted, increasing) times t_eval; t_eval[0] is the start."""
    t_eval = np.asarray(t_eval, dtype=float)
    if len(t_eval) == 0:
        raise DomainError("t_eval must be non-empty")
    if np.any(np.diff(t_eval) < 0):
        raise DomainError("t_eval must be non-decreasing")
    out = np.empty((len(t_eval), len(y0)))
    out[0] = y0
    idx = 1

    def collector(seg: DenseSegment):
        nonlocal idx
        while idx < len(t_eval) and t_eval[idx] <= seg.t1 + 1e-15:
            out[idx] = seg(min(t_eval[idx], seg.t1))
            idx += 1
        return None

    advance(
        rhs, y0, t_eval[0], t_eval[-1],
        rtol=rtol, atol=atol, max_step=max_step, on_segment=collector,
    )
    while idx < len(t_eval):  # trailing duplicates of the final time
        out[idx] = out[idx - 1]
        idx += 1
    return out
