"""Flow integration and Poincaré return maps for the perturbed Lorenz field.

The Lorenz-specialized fast path lives in `_kernels`; this module owns
the public contracts: tolerance configuration, crossing events with
their residual/transversality invariants, and the error mapping from
kernel status codes to typed exceptions. A generic-field crossing
search built on the `_rk` reference engine is provided for oracle
problems and for cross-checking the specialized scan; both use the
same localization scheme (dense-output scan at max_step/4, bisection,
one safeguarded secant polish).

Orbits that never return are not detectable exactly; the configured
max_time stands in for membership of the stable set of the saddle, and
exceeding it raises OrbitCapturedError.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from . import _kernels, _rk
from .errors import (
    DivergenceError,
    DomainError,
    OrbitCapturedError,
    StiffnessError,
)
from .sections import SectionKind, SectionPoint, SectionSpec, signed_distance, to_chart
from .vector_fields import LorenzParams, Perturbation, PerturbationMode, State3, as_state


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float = 0.25
    max_time: float = 100.0
    crossing_tol: float = 1e-9

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "max_step", "max_time", "crossing_tol"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if self.crossing_tol > self.abs_tol * 1e3:
            raise DomainError("crossing_tol must not exceed abs_tol * 1e3")


@dataclass(frozen=True)
class CrossingEvent:
    """A localized transversal section crossing: the return time, the
    crossing point, and the sign of the normal flux there."""

    time: float
    point: np.ndarray
    direction: int
    inside: bool = True

    def __post_init__(self):
        if not self.time > 0:
            raise DomainError("crossing time must be positive")


def _field_args(params: LorenzParams, pert: Perturbation,
                section: Optional[SectionSpec]) -> tuple:
    mode = {PerturbationMode.NONE: _kernels.MODE_NONE,
            PerturbationMode.CONSTANT_ADDITIVE: _kernels.MODE_CONSTANT,
            PerturbationMode.SECTION_LOCALIZED: _kernels.MODE_LOCALIZED}[pert.mode]
    if mode == _kernels.MODE_LOCALIZED:
        if section is None:
            raise DomainError("section-localized perturbation requires a section")
        fsec = (_kernels.SECTION_PLANAR
                if section.kind is SectionKind.PLANAR_SQUARE
                else _kernels.SECTION_CASIMIR)
        fpz = section.plane_offset if section.kind is SectionKind.PLANAR_SQUARE else 0.0
    else:
        fsec, fpz = 0, 0.0
    h = pert.direction
    return (params.zeta, params.gamma, params.beta, mode, pert.eta,
            h[0], h[1], h[2], pert.bump_width, fsec, fpz)


def _section_args(section: SectionSpec) -> tuple:
    O = section.rotation_O
    if section.kind is SectionKind.PLANAR_SQUARE:
        code, pz = _kernels.SECTION_PLANAR, section.plane_offset
    else:
        code, pz = _kernels.SECTION_CASIMIR, 0.0
    return code, pz, O[0, 0], O[1, 0], O[0, 1], O[1, 1]


def _raise_for_status(status: int, context: str, t: float):
    if status == 1:
        raise OrbitCapturedError(
            f"{context}: no crossing within max_time (t = {t:.6g})")
    if status == 2:
        raise StiffnessError(f"{context}: step size collapsed at t = {t:.6g}")
    if status == 3:
        raise DivergenceError(f"{context}: trajectory diverged by t = {t:.6g}")
    raise DomainError(f"{context}: kernel status {status}")


def integrate(params: LorenzParams, pert: Perturbation, y0: State3, t: float,
              cfg: Optional[IntegratorConfig] = None,
              section: Optional[SectionSpec] = None) -> np.ndarray:
    """The flow map of the perturbed field over time t >= 0."""
    y = as_state(y0)
    if t < 0:
        raise DomainError("integration time must be nonnegative")
    if t == 0:
        return y.copy()
    cfg = cfg or IntegratorConfig()
    fargs = _field_args(params, pert, section)
    status, tend, a, b, c = _kernels.advance(
        y[0], y[1], y[2], 0.0, t, *fargs,
        cfg.rel_tol, cfg.abs_tol, cfg.max_step)
    if status != 0:
        _raise_for_status(status, "integrate", tend)
    return np.array([a, b, c])


def sample_states(params: LorenzParams, pert: Perturbation, y0: State3,
                  times: np.ndarray, cfg: Optional[IntegratorConfig] = None,
                  section: Optional[SectionSpec] = None) -> np.ndarray:
    """Dense-output states at sorted times; times[0] is the start time."""
    y = as_state(y0)
    times = np.ascontiguousarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise DomainError("times must be a non-empty 1-D array")
    if np.any(np.diff(times) < 0):
        raise DomainError("times must be non-decreasing")
    cfg = cfg or IntegratorConfig()
    out = np.empty((len(times), 3))
    fargs = _field_args(params, pert, section)
    status = _kernels.collect_states(
        y[0], y[1], y[2], times, out, *fargs,
        cfg.rel_tol, cfg.abs_tol, cfg.max_step)
    if status != 0:
        _raise_for_status(status, "sample_states", float(times[-1]))
    return out


def first_crossing(params: LorenzParams, pert: Perturbation,
                   section: SectionSpec, y0: State3,
                   cfg: Optional[IntegratorConfig] = None,
                   *, require_inside: Optional[bool] = None) -> CrossingEvent:
    """Earliest transversal crossing of the section after time zero.

    Only crossings with the flow passing in the negative normal
    direction count. For the planar section, crossings outside the
    square are skipped by default (the square is the section set); for
    the curved section every gated crossing counts and the clip square
    only sets the event's `inside` flag.
    """
    y = as_state(y0)
    cfg = cfg or IntegratorConfig()
    if require_inside is None:
        require_inside = section.kind is SectionKind.PLANAR_SQUARE
    fargs = _field_args(params, pert, section)
    scode, pz, o11, o21, o12, o22 = _section_args(section)
    status, tc, a, b, c, sdot, inside = _kernels.next_crossing(
        y[0], y[1], y[2], 0.0, cfg.max_time, *fargs,
        scode, pz, -1, section.half_width, 1 if require_inside else 0,
        o11, o21, o12, o22,
        cfg.rel_tol, cfg.abs_tol, cfg.max_step, cfg.crossing_tol)
    if status != 0:
        _raise_for_status(status, "first_crossing", tc)
    return CrossingEvent(time=tc, point=np.array([a, b, c]),
                         direction=-1 if sdot < 0 else 1, inside=bool(inside))


def return_map(params: LorenzParams, pert: Perturbation, section: SectionSpec,
               x: Union[SectionPoint, State3],
               cfg: Optional[IntegratorConfig] = None) -> CrossingEvent:
    """(return time, next section point) of a point already on the section."""
    cfg = cfg or IntegratorConfig()
    y = x.ambient if isinstance(x, SectionPoint) else as_state(x)
    resid = abs(signed_distance(section, y))
    if resid > max(cfg.crossing_tol * 1e3, 1e-6 * (1.0 + float(y @ y))):
        raise DomainError(
            f"return_map input is off the section (residual {resid:.3g})")
    return first_crossing(params, pert, section, y, cfg)


def return_section_point(params: LorenzParams, pert: Perturbation,
                         section: SectionSpec, x: SectionPoint,
                         cfg: Optional[IntegratorConfig] = None
                         ) -> "tuple[SectionPoint, float]":
    """Convenience composition: return map followed by the chart."""
    ev = return_map(params, pert, section, x, cfg)
    return to_chart(section, ev.point), ev.time


# ---------------------------------------------------------------------------
# Generic-field crossing search on the reference engine (oracles and
# cross-checks; the specialized kernels never see these fields).
# ---------------------------------------------------------------------------


def first_crossing_generic(rhs: Callable, s_fn: Callable, y0: np.ndarray,
                           cfg: Optional[IntegratorConfig] = None,
                           direction: int = -1,
                           t_limit: Optional[float] = None) -> CrossingEvent:
    """Crossing search for an arbitrary field and event function.

    Mirrors the specialized scan: dense segments are probed at spacing
    max_step/4 with hysteresis arming near an on-section start, then the
    bracket is bisected to crossing_tol and polished with one secant
    step.
    """
    cfg = cfg or IntegratorConfig()
    y0 = np.asarray(y0, dtype=float)
    t_limit = cfg.max_time if t_limit is None else t_limit
    s0 = s_fn(y0)
    sdot0 = (s_fn(y0 + 1e-7 * rhs(0.0, y0)) - s0) / 1e-7
    s_arm = 100.0 * (abs(sdot0) + 1.0) * cfg.crossing_tol
    state = {"s_prev": s0, "armed": abs(s0) > s_arm, "hit": None}

    def on_segment(seg: _rk.DenseSegment):
        n_sub = max(2, int(abs(seg.h) / (0.25 * cfg.max_step)) + 1)
        t_prev = seg.t0
        for j in range(1, n_sub + 1):
            t_cur = seg.t0 + seg.h * (j / n_sub)
            s_cur = s_fn(seg(t_cur))
            s_prev = state["s_prev"]
            if state["armed"]:
                down = direction <= 0 and s_prev > 0.0 >= s_cur
                up = direction >= 0 and s_prev < 0.0 <= s_cur
                if down or up:
                    ta, tb, sa, sb = t_prev, t_cur, s_prev, s_cur
                    while tb - ta > cfg.crossing_tol:
                        tm = 0.5 * (ta + tb)
                        sm = s_fn(seg(tm))
                        if (sm > 0.0) == (sa > 0.0):
                            ta, sa = tm, sm
                        else:
                            tb, sb = tm, sm
                    ts = ta + sa * (tb - ta) / (sa - sb) if sa != sb else 0.5 * (ta + tb)
                    ts = min(max(ts, ta), tb)
                    state["hit"] = (ts, seg(ts))
                    return ts
            elif abs(s_cur) > s_arm:
                state["armed"] = True
            state["s_prev"] = s_cur
            t_prev = t_cur
        return None

    _rk.advance(rhs, y0, 0.0, t_limit, rtol=cfg.rel_tol, atol=cfg.abs_tol,
                max_step=cfg.max_step, on_segment=on_segment)
    if state["hit"] is None:
        raise OrbitCapturedError(
            f"no crossing of the generic event within t = {t_limit:.6g}")
    tc, yc = state["hit"]
    eps = 1e-7
    sdot = (s_fn(yc + eps * rhs(tc, yc)) - s_fn(yc)) / eps
    return CrossingEvent(time=tc, point=yc, direction=-1 if sdot < 0 else 1)
