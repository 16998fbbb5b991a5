"""Impulsive-forcing process: flow segments stitched at section crossings.

Between crossings the orbit follows the field with one frozen noise
value; at each crossing the stream shifts and the next value takes over.
The result is a piecewise deterministic path whose embedded data (the
sequence of section points and inter-crossing times) drives everything
statistical here: return-time laws, occupation averages, the renewal
ratio estimator.

Noise coordinates are consumed in order starting at the stream cursor;
an off-section start spends coordinate 0 on the approach segment.
Section hits are charted leniently: the normalized leaf coordinate is
clamped into [0, 1] instead of raising when forcing pushes an orbit
slightly past the unperturbed census range.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _kernels
from ._kernels import crossing_chain as _kernel_chain
from .errors import DomainError
from .flow_integrator import (
    IntegratorConfig,
    _field_args,
    _raise_for_status,
    _section_args,
    first_crossing,
    integrate,
    return_map,
    sample_states,
)
from .noise_driver import NoiseStream, draw_block
from .sections import (
    SectionKind,
    SectionPoint,
    SectionSpec,
    signed_distance,
    to_chart,
)
from .vector_fields import (
    LorenzParams,
    Perturbation,
    PerturbationMode,
    State3,
    as_state,
    casimir,
)

BUILTIN_OBSERVABLES: Dict[str, Callable[[np.ndarray], float]] = {
    "y1": lambda y: float(y[0]),
    "y2": lambda y: float(y[1]),
    "y3": lambda y: float(y[2]),
    "casimir": casimir,
}

_DEFAULT_TEMPLATE = Perturbation.constant(0.0)


@dataclass(frozen=True)
class PathSegment:
    eta: float
    start_time: float
    duration: float
    entry_point: np.ndarray = field(repr=False)


@dataclass
class PdmpPath:
    """One realization up to the horizon.

    `segments` covers [0, horizon] without gaps; every segment ends on
    the section except the last, which is cut at the horizon.
    `section_hits[k]` is the terminal point of `segments[k]`.
    `return_times` holds the durations of section-to-section segments
    only, so an off-section start's approach segment is excluded.
    `noise_used` counts consumed stream coordinates, the cut final
    segment's value included.
    """

    params: LorenzParams
    section: SectionSpec
    pert_template: Perturbation
    cfg: IntegratorConfig
    segments: List[PathSegment]
    section_hits: List[SectionPoint]
    return_times: np.ndarray
    final_state: np.ndarray
    noise_used: int

    @property
    def horizon(self) -> float:
        last = self.segments[-1]
        return last.start_time + last.duration

    @property
    def n_crossings(self) -> int:
        return len(self.section_hits)

    @property
    def mean_return(self) -> float:
        if len(self.return_times) == 0:
            raise DomainError("path has no completed returns")
        return float(self.return_times.mean())


@dataclass
class RenewalStats:
    """Embedded-chain samples: post-burn-in hits and their return times."""

    chain_points: List[SectionPoint]
    return_time_samples: np.ndarray
    mean_return: float


@dataclass(frozen=True)
class RenewalEstimate:
    value: float
    standard_error: float
    n_samples: int


def _check_template(pert_template: Perturbation, epsilon: float) -> None:
    if pert_template.mode is PerturbationMode.NONE and epsilon > 0:
        raise DomainError(
            "template with no forcing mode cannot carry nonzero noise")


def _lenient_chart(section: SectionSpec, y: np.ndarray) -> SectionPoint:
    """Chart a crossing point, clamping the leaf coordinate into [0, 1]."""
    if section.kind is SectionKind.PLANAR_SQUARE:
        return to_chart(section, y)
    p = section.params
    cal = section.calibration
    if cal is None:
        raise DomainError("curved section needs calibration to chart hits")
    status, r, v, comp = _kernels.to_chart(y[0], y[1], y[2], p.zeta, p.gamma,
                                           p.beta, 1e-5)
    if status != 0:
        raise DomainError(f"crossing point failed to chart (status {status})")
    u = min(max(cal.normalize(r), 0.0), 1.0)
    return SectionPoint(chart=(u, v), ambient=np.array(y, dtype=float),
                        component_index=1 if comp > 0 else 2)


def _on_section(section: SectionSpec, y: np.ndarray,
                cfg: IntegratorConfig) -> bool:
    resid = abs(signed_distance(section, y))
    return resid <= max(cfg.crossing_tol * 1e3, 1e-6 * (1.0 + float(y @ y)))


def _simpson_along(params: LorenzParams, pert: Perturbation,
                   section: Optional[SectionSpec], y0: np.ndarray,
                   duration: float, f: Callable[[np.ndarray], float],
                   quadrature_dt: float, cfg: IntegratorConfig) -> float:
    """Composite Simpson integral of f(orbit) over one flow segment.

    Node count is even and at least four, so short segments keep five
    nodes. The weights are small integers; their dot with a constant
    sample vector is exact, which makes f = 1 integrate to the exact
    duration.
    """
    n = max(4, int(math.ceil(duration / quadrature_dt)))
    if n % 2:
        n += 1
    ts = np.linspace(0.0, duration, n + 1)
    states = sample_states(params, pert, y0, ts, cfg, section)
    fs = np.array([f(s) for s in states], dtype=float)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    # ratio first: for constant fs the quotient is exactly 1.0, so the
    # segment integral is exactly duration and f = 1 averages to 1.0
    return duration * (float(w @ fs) / float(w.sum()))


def step_chain(params: LorenzParams, section: SectionSpec, x: SectionPoint,
               eta: float, cfg: Optional[IntegratorConfig] = None,
               pert_template: Perturbation = _DEFAULT_TEMPLATE,
               ) -> Tuple[SectionPoint, float]:
    """One transition of the embedded chain: (next point, return time).

    The input must already sit on the section; off-section points are
    rejected the same way the underlying return map rejects them.
    """
    cfg = cfg or IntegratorConfig()
    ev = return_map(params, pert_template.with_eta(eta), section, x, cfg)
    return _lenient_chart(section, ev.point), ev.time


def _chain_batches(params: LorenzParams, section: SectionSpec,
                   pert_template: Perturbation, cfg: IntegratorConfig,
                   y: np.ndarray, stream: NoiseStream, first_coord: int,
                   batch_size: Callable[[int], int]):
    """Run the crossing kernel in batches from an on-section state.

    Yields (etas, hits, taus, n_done, status) per kernel run.
    `batch_size(k)` is consulted with the next coordinate index before
    each run; a non-positive value ends the generator. After a yield
    the resume point advances to the last completed hit, so the caller
    sees one contiguous chain across batches.
    """
    fargs = _field_args(params, pert_template, section)
    chain_args = fargs[:4] + fargs[5:]  # per-segment eta comes from the array
    scode, pz, o11, o21, o12, o22 = _section_args(section)
    need_inside = 1 if section.kind is SectionKind.PLANAR_SQUARE else 0
    k = first_coord
    while True:
        n = int(batch_size(k))
        if n <= 0:
            return
        etas = draw_block(stream.spec, stream.cursor + k, n)
        hits = np.empty((n, 3))
        taus = np.empty(n)
        flags = np.empty(n, dtype=np.int64)
        status, n_done = _kernel_chain(
            y[0], y[1], y[2], etas, *chain_args,
            scode, pz, -1, section.half_width, need_inside,
            o11, o21, o12, o22,
            cfg.rel_tol, cfg.abs_tol, cfg.max_step, cfg.crossing_tol,
            cfg.max_time, hits, taus, flags)
        yield etas, hits, taus, n_done, status
        if n_done > 0:
            y = hits[n_done - 1]
        k += n_done
        if status != 0:
            return


def simulate_pdmp(params: LorenzParams, section: SectionSpec, y0: State3,
                  stream: NoiseStream, horizon: float,
                  cfg: Optional[IntegratorConfig] = None,
                  pert_template: Perturbation = _DEFAULT_TEMPLATE) -> PdmpPath:
    """Drive the process from y0 for `horizon` time units."""
    if horizon <= 0:
        raise DomainError("horizon must be positive")
    cfg = cfg or IntegratorConfig()
    _check_template(pert_template, stream.spec.epsilon)
    y = as_state(y0).copy()
    t = 0.0
    used = 0
    segments: List[PathSegment] = []
    hit_rows: List[np.ndarray] = []
    taus_all: List[float] = []

    if not _on_section(section, y, cfg):
        eta0 = stream.head()
        ev = first_crossing(params, pert_template.with_eta(eta0), section, y,
                            cfg)
        if ev.time >= horizon:
            final = integrate(params, pert_template.with_eta(eta0), y,
                              horizon, cfg, section)
            segments.append(PathSegment(eta0, 0.0, horizon, y.copy()))
            return PdmpPath(params, section, pert_template, cfg, segments, [],
                            np.empty(0), final, 1)
        segments.append(PathSegment(eta0, 0.0, ev.time, y.copy()))
        hit_rows.append(ev.point.copy())
        t = ev.time
        y = ev.point
        used = 1

    # the mean return only sizes the batches; correctness is unaffected
    tau_guess = 1.0
    if section.calibration is not None:
        tau_guess = section.calibration.mean_return

    def batch_size(_k: int) -> int:
        remaining = horizon - t
        if remaining <= 0:
            return 0
        return min(65536, int(1.4 * remaining / tau_guess) + 8)

    last_eta = 0.0
    truncated = False
    for etas, hits, taus, n_done, status in _chain_batches(
            params, section, pert_template, cfg, y, stream, used, batch_size):
        for i in range(n_done):
            if t + taus[i] >= horizon:
                last_eta = float(etas[i])
                truncated = True
                break
            segments.append(
                PathSegment(float(etas[i]), t, float(taus[i]), y.copy()))
            hit_rows.append(hits[i].copy())
            taus_all.append(float(taus[i]))
            t += float(taus[i])
            y = hits[i].copy()
            used += 1
        if truncated:
            used += 1  # the cut segment still consumed its value
            break
        if status != 0 and n_done < len(etas):
            _raise_for_status(status, "simulate_pdmp", t)

    if not truncated:
        # unreachable through normal dynamics (positive returns exhaust
        # any horizon), kept so a degenerate batch plan still terminates
        last_eta = float(draw_block(stream.spec, stream.cursor + used, 1)[0])
        used += 1
    final = integrate(params, pert_template.with_eta(last_eta), y,
                      horizon - t, cfg, section)
    segments.append(PathSegment(float(last_eta), t, horizon - t, y.copy()))

    section_hits = [_lenient_chart(section, h) for h in hit_rows]
    return PdmpPath(params, section, pert_template, cfg, segments,
                    section_hits, np.asarray(taus_all), final, used)


def segment_integrals(path: PdmpPath, f: Callable[[np.ndarray], float],
                      quadrature_dt: float = 0.01
                      ) -> Tuple[np.ndarray, np.ndarray]:
    """Per-segment (integral of f along the orbit, duration)."""
    if quadrature_dt <= 0:
        raise DomainError("quadrature_dt must be positive")
    vals = np.empty(len(path.segments))
    durs = np.empty(len(path.segments))
    for k, seg in enumerate(path.segments):
        vals[k] = _simpson_along(
            path.params, path.pert_template.with_eta(seg.eta), path.section,
            seg.entry_point, seg.duration, f, quadrature_dt, path.cfg)
        durs[k] = seg.duration
    return vals, durs


def time_average(path: PdmpPath, f: Callable[[np.ndarray], float],
                 quadrature_dt: float = 0.01) -> float:
    """(1/T) times the integral of f over the whole path."""
    vals, durs = segment_integrals(path, f, quadrature_dt)
    return float(vals.sum() / durs.sum())


class EmpiricalCdf:
    """Right-continuous empirical distribution function of samples."""

    def __init__(self, samples: Sequence[float]):
        arr = np.sort(np.asarray(samples, dtype=float))
        if len(arr) == 0:
            raise DomainError("need at least one sample")
        self._sorted = arr

    def __call__(self, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        t = np.asarray(t, dtype=float)
        out = np.searchsorted(self._sorted, t, side="right") / len(self._sorted)
        return float(out) if out.ndim == 0 else out

    @property
    def survival_integral(self) -> float:
        """Integral of 1 - F over [0, inf); equals the sample mean."""
        return float(self._sorted.mean())

    @property
    def samples(self) -> np.ndarray:
        return self._sorted.copy()


def empirical_return_cdf(samples: Sequence[float]) -> EmpiricalCdf:
    return EmpiricalCdf(samples)


def collect_renewal_stats(params: LorenzParams, section: SectionSpec,
                          y0: State3, stream: NoiseStream, n_steps: int,
                          cfg: Optional[IntegratorConfig] = None,
                          burn_in: int = 1000,
                          pert_template: Perturbation = _DEFAULT_TEMPLATE,
                          ) -> Tuple[RenewalStats, NoiseStream]:
    """Embedded-chain samples after burn-in, plus the advanced stream."""
    if n_steps < 1:
        raise DomainError("n_steps must be positive")
    cfg = cfg or IntegratorConfig()
    _check_template(pert_template, stream.spec.epsilon)
    y = as_state(y0).copy()
    used = 0
    if not _on_section(section, y, cfg):
        ev = first_crossing(params, pert_template.with_eta(stream.head()),
                            section, y, cfg)
        y = ev.point
        used = 1

    total = burn_in + n_steps
    collected_hits: List[np.ndarray] = []
    collected_taus: List[float] = []
    done = 0

    def batch_size(_k: int) -> int:
        return min(65536, total - done)

    for etas, hits, taus, n_done, status in _chain_batches(
            params, section, pert_template, cfg, y, stream, used, batch_size):
        for i in range(n_done):
            if done >= burn_in:
                collected_hits.append(hits[i].copy())
                collected_taus.append(float(taus[i]))
            done += 1
        if status != 0 and done < total:
            _raise_for_status(status, "collect_renewal_stats", float(done))
        if done >= total:
            break

    taus_arr = np.asarray(collected_taus)
    points = [_lenient_chart(section, h) for h in collected_hits]
    return (RenewalStats(points, taus_arr, float(taus_arr.mean())),
            stream.shift(used + total))


def renewal_stationary(params: LorenzParams, section: SectionSpec,
                       stats: RenewalStats, f: Callable[[np.ndarray], float],
                       stream: NoiseStream, n_mc: int,
                       cfg: Optional[IntegratorConfig] = None,
                       pert_template: Perturbation = _DEFAULT_TEMPLATE,
                       quadrature_dt: float = 0.01) -> RenewalEstimate:
    """Ratio estimator of the stationary average of f.

    Numerator: the segment integral of f started from a chain point
    under a fresh noise value, averaged over draws; denominator: the
    matching mean segment duration. The standard error comes from the
    delta method applied to the paired (integral, duration) samples.
    Chain points are cycled deterministically, so a rerun with the same
    stream cursor reproduces the estimate bit for bit.
    """
    if n_mc < 2:
        raise DomainError("n_mc must be at least 2")
    if not stats.chain_points:
        raise DomainError("stats has no chain points")
    cfg = cfg or IntegratorConfig()
    _check_template(pert_template, stream.spec.epsilon)
    etas = draw_block(stream.spec, stream.cursor, n_mc)
    nums = np.empty(n_mc)
    dens = np.empty(n_mc)
    m = len(stats.chain_points)
    for i in range(n_mc):
        x = stats.chain_points[i % m]
        pert = pert_template.with_eta(float(etas[i]))
        ev = first_crossing(params, pert, section, x.ambient, cfg)
        nums[i] = _simpson_along(params, pert, section, x.ambient, ev.time, f,
                                 quadrature_dt, cfg)
        dens[i] = ev.time
    ratio = float(nums.mean() / dens.mean())
    resid = nums - ratio * dens
    se = float(np.sqrt(np.sum(resid ** 2) / (n_mc * (n_mc - 1)))
               / dens.mean())
    return RenewalEstimate(ratio, se, n_mc)


def drift_constants(params: LorenzParams, eta_abs_max: float, tau_min: float,
                    direction=(0.0, 0.0, 1.0)) -> Tuple[float, float]:
    """(a, K) with 1 + C after one return <= a (1 + C before) + K.

    Read off the envelope C(t) <= C(0) e^(-m t) + (h/m)^2 (1 + e^(-m t))
    at t >= tau_min, with h the largest affine drift norm over
    |eta| <= eta_abs_max. a < 1 whenever tau_min > 0.
    """
    if tau_min <= 0:
        raise DomainError("tau_min must be positive")
    if eta_abs_max < 0:
        raise DomainError("eta_abs_max must be nonnegative")
    m = params.contraction_rate()
    h0 = params.affine_term()
    d = np.asarray(direction, dtype=float)
    h = max(float(np.linalg.norm(h0 + s * eta_abs_max * d))
            for s in (-1.0, 1.0))
    a = math.exp(-m * tau_min)
    K = (1.0 - a) + 2.0 * (h / m) ** 2
    return a, K


def export_path_csv(path: PdmpPath, target: Union[str, io.TextIOBase]) -> None:
    """Segment table: (segment_index, eta, t_start, duration, u, v).

    The chart columns hold the segment's terminal section hit; the cut
    final segment (and nothing else) leaves them empty. Floats are
    written with repr, so identical paths serialize byte for byte.
    """
    own = isinstance(target, str)
    fh = open(target, "w", newline="") if own else target
    try:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["segment_index", "eta", "t_start", "duration", "u", "v"])
        for k, seg in enumerate(path.segments):
            if k < len(path.section_hits):
                u, v = path.section_hits[k].chart
                tail = [repr(float(u)), repr(float(v))]
            else:
                tail = ["", ""]
            wr.writerow([k, repr(float(seg.eta)), repr(float(seg.start_time)),
                         repr(float(seg.duration))] + tail)
    finally:
        if own:
            fh.close()


def path_summary(path: PdmpPath,
                 observables: Optional[Dict[str, Callable]] = None,
                 quadrature_dt: float = 0.01, n_batches: int = 32) -> dict:
    """JSON-ready run summary with batch-mean standard errors."""
    obs = observables if observables is not None else BUILTIN_OBSERVABLES
    out = {
        "horizon": path.horizon,
        "n_crossings": path.n_crossings,
        "mean_return": (path.mean_return if len(path.return_times) else None),
        "noise_used": path.noise_used,
        "observables": {},
    }
    for name, fn in obs.items():
        vals, durs = segment_integrals(path, fn, quadrature_dt)
        total = float(vals.sum() / durs.sum())
        nb = min(n_batches, len(vals))
        splits_v = np.array_split(vals, nb)
        splits_d = np.array_split(durs, nb)
        means = np.array([v.sum() / d.sum()
                          for v, d in zip(splits_v, splits_d)])
        se = float(means.std(ddof=1) / np.sqrt(nb)) if nb > 1 else float("nan")
        out["observables"][name] = {"value": total, "standard_error": se}
    return out
