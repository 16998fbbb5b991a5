"""Poincaré sections for the shifted Lorenz flow.

Two section geometries are supported. The planar section is the square
patch of the plane y3 = 1-(gamma+zeta) around the saddle's stable axis,
described in coordinates rotated so that the chart axes align with the
saddle's in-plane eigendirections. The curved section is the surface
where the squared radius C(y) = <y,y> is extremal along the flow, i.e.
{<phi0(y), y> = 0} together with the gate selecting maxima; it has two
components separated by the plane y1 = 0 and meeting only at the saddle.

On the curved section the stable foliation is identified with the
intersections of the spheres {C = r} with the surface. Each leaf is an
arc parametrized in closed form as a graph over y3 (see `_kernels`),
which gives charts with round trips at solver precision and a quotient
coordinate u that is an affine function of r per component. The lower
end r* of the usable leaf range is not a model constant; it is
calibrated from a long unperturbed crossing census.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from . import _kernels
from .errors import (
    CalibrationError,
    DegenerateEquilibriumError,
    DomainError,
    OutOfFoliationError,
)
from .vector_fields import LorenzParams, Perturbation, State3, as_state, eval_field

_DEFAULT_TOLS = (1e-9, 1e-11, 0.25, 1e-9, 100.0)  # rel, abs, max_step, crossing, max_time
_SURFACE_TOL = 1e-6
_QUOTIENT_BAND = 0.02  # accepted chart overshoot beyond [0,1] before erroring


class SectionKind(Enum):
    PLANAR_SQUARE = "planar_square"
    CASIMIR_SURFACE = "casimir_surface"


@dataclass(frozen=True, eq=False)
class CasimirCalibration:
    """Leaf-range data measured from an unperturbed crossing census."""

    r_star: float
    r_top: float
    census_min: float
    census_max: float
    census_n: int
    mean_return: float
    min_return: float
    max_return: float
    clip_fraction: float
    leaf_grid: np.ndarray  # columns: r, arc low y3, arc high y3, arc length

    def normalize(self, r: float) -> float:
        return (r - self.r_star) / (self.r_top - self.r_star)

    def denormalize(self, u: float) -> float:
        return self.r_star + u * (self.r_top - self.r_star)


@dataclass(frozen=True, eq=False)
class SectionSpec:
    kind: SectionKind
    params: LorenzParams
    rotation_O: np.ndarray
    half_width: float = 0.5
    calibration: Optional[CasimirCalibration] = None

    def __post_init__(self):
        if self.half_width <= 0:
            raise DomainError("half_width must be positive")
        R = self.rotation_O
        if R.shape != (3, 3) or np.abs(R.T @ R - np.eye(3)).max() > 1e-12:
            raise DomainError("rotation_O must be orthogonal to 1e-12")

    @property
    def plane_offset(self) -> float:
        return 1.0 - (self.params.gamma + self.params.zeta)

    @property
    def r_top(self) -> float:
        return (self.params.gamma + self.params.zeta) ** 2

    # Signed distance duck-typing consumed by vector_fields for the
    # section-localized perturbation mode.
    def signed_distance(self, y: State3) -> float:
        return signed_distance(self, y)

    def distance_gradient(self, y: State3) -> np.ndarray:
        return distance_gradient(self, y)


@dataclass(frozen=True)
class SectionPoint:
    """A section point with both chart and ambient representations.

    For the curved section `chart` is (u, v) with u the normalized leaf
    coordinate in [0, 1] and v the arclength along the leaf arc;
    component_index is 1 on the y1 > 0 component, 2 on the other. For
    the planar section `chart` holds the rotated in-plane coordinates
    and component_index is None.
    """

    chart: tuple
    ambient: np.ndarray = field(repr=False)
    component_index: Optional[int] = None


def _saddle_frame(params: LorenzParams) -> np.ndarray:
    """Orthogonal frame [n_ss, e_ss, e3] aligned with the saddle splitting.

    The in-plane Jacobian block at the saddle is not a normal matrix, so
    no orthogonal matrix diagonalizes it. The frame used here has its
    second axis along the strong-stable eigendirection and its first
    axis the in-plane normal oriented toward the unstable eigenvector;
    in this frame the linearization is block lower-triangular with the
    true eigenvalues on the diagonal, and chart verticals align with
    the stable direction, which is what the quotient construction needs.
    """
    ze, ga = params.zeta, params.gamma
    tr = -(1.0 + ze)
    det = ze * (1.0 - ga)
    disc = tr * tr - 4.0 * det
    if disc <= 0.0:
        raise DegenerateEquilibriumError(
            "in-plane eigenvalues are complex; no real saddle frame exists")
    lam_u = 0.5 * (tr + np.sqrt(disc))
    lam_ss = 0.5 * (tr - np.sqrt(disc))
    if not (lam_u > 0.0 > lam_ss):
        raise DegenerateEquilibriumError(
            f"equilibrium is not a saddle: eigenvalues {lam_u:.4g}, {lam_ss:.4g}")
    e_u = np.array([ze, lam_u + ze])
    e_ss = np.array([ze, lam_ss + ze])
    e_ss /= np.linalg.norm(e_ss)
    n_ss = np.array([-e_ss[1], e_ss[0]])
    if n_ss @ e_u < 0:
        n_ss = -n_ss
    O = np.zeros((3, 3))
    O[:2, 0] = n_ss
    O[:2, 1] = e_ss
    O[2, 2] = 1.0
    return O


def _cfg_tuple(cfg) -> tuple:
    if cfg is None:
        return _DEFAULT_TOLS
    return (cfg.rel_tol, cfg.abs_tol, cfg.max_step, cfg.crossing_tol, cfg.max_time)


def _run_census(params: LorenzParams, O: np.ndarray, half_width: float,
                n_returns: int, burn_time: float, start, cfg) -> dict:
    rel, abs_, hmax, ctol, tmax = _cfg_tuple(cfg)
    ze, ga, be = params.zeta, params.gamma, params.beta
    y = np.asarray(start, dtype=float)
    status, _, a, b, c = _kernels.advance(
        y[0], y[1], y[2], 0.0, burn_time,
        ze, ga, be, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0.0,
        rel, abs_, hmax)
    if status != 0:
        raise CalibrationError(f"census burn-in failed with status {status}")
    etas = np.zeros(n_returns)
    hits = np.empty((n_returns, 3))
    taus = np.empty(n_returns)
    flags = np.empty(n_returns, dtype=np.int64)
    status, n_done = _kernels.crossing_chain(
        a, b, c, etas, ze, ga, be, 0, 0.0, 0.0, 0.0, 0.0, 0, 0.0,
        _kernels.SECTION_CASIMIR, 0.0, -1, half_width, 0,
        O[0, 0], O[1, 0], O[0, 1], O[1, 1],
        rel, abs_, hmax, ctol, tmax, hits, taus, flags)
    if status != 0 or n_done < n_returns:
        raise CalibrationError(
            f"census chain stopped early: status {status} after {n_done} returns")
    return {"hits": hits, "taus": taus, "flags": flags}


def calibrate(params: LorenzParams, O: np.ndarray, half_width: float, *,
              n_returns: int = 2000, burn_time: float = 20.0,
              start=(2.0, 3.0, -20.0), cfg=None,
              leaf_grid_n: int = 33) -> CasimirCalibration:
    """Measure the usable leaf range r ∈ [r*, (gamma+zeta)^2] by census.

    r* is the census minimum of C over n_returns unperturbed crossings
    less a 1% margin. The top of the range is pinned analytically: the
    leaf through the saddle is the sphere of squared radius
    (gamma+zeta)^2. A coarse grid of leaf arcs is tabulated for the
    serialization interface; chart evaluation never interpolates it.
    """
    census = _run_census(params, O, half_width, n_returns, burn_time, start, cfg)
    hits, taus, flags = census["hits"], census["taus"], census["flags"]
    r_vals = (hits ** 2).sum(axis=1)
    r_top = (params.gamma + params.zeta) ** 2
    r_min = float(r_vals.min())
    r_max = float(r_vals.max())
    if r_max >= r_top:
        raise CalibrationError(
            f"census reached C = {r_max:.6g}, at or past the saddle leaf {r_top:.6g}")
    r_star = 0.99 * r_min
    ze, ga, be = params.zeta, params.gamma, params.beta
    grid = np.empty((leaf_grid_n, 4))
    for i, r in enumerate(np.linspace(r_star, r_top * (1 - 1e-9), leaf_grid_n)):
        st, lo, hi, length = _kernels.leaf_arc(r, ze, ga, be)
        if st != 0:
            raise CalibrationError(f"leaf arc construction failed at r = {r:.6g}")
        grid[i] = (r, lo, hi, length)
    return CasimirCalibration(
        r_star=r_star,
        r_top=r_top,
        census_min=r_min,
        census_max=r_max,
        census_n=n_returns,
        mean_return=float(taus.mean()),
        min_return=float(taus.min()),
        max_return=float(taus.max()),
        clip_fraction=float(flags.mean()),
        leaf_grid=grid,
    )


def build_section(kind: SectionKind, params: LorenzParams, *,
                  half_width: float = 0.5, calibrated: bool = True,
                  n_returns: int = 2000, cfg=None) -> SectionSpec:
    """Construct a section, including the saddle frame and (for the curved
    section, unless disabled) the census calibration of the leaf range."""
    O = _saddle_frame(params)
    if kind is SectionKind.PLANAR_SQUARE:
        return SectionSpec(kind=kind, params=params, rotation_O=O,
                           half_width=half_width)
    cal = None
    if calibrated:
        cal = calibrate(params, O, half_width, n_returns=n_returns, cfg=cfg)
    return SectionSpec(kind=kind, params=params, rotation_O=O,
                       half_width=half_width, calibration=cal)


def signed_distance(section: SectionSpec, y: State3) -> float:
    """Event function whose down-crossings are the section hits.

    Planar: height above the supporting plane. Curved: d/dt of the
    squared radius along the unperturbed field, which vanishes exactly
    on the extremal surface.
    """
    y = as_state(y)
    p = section.params
    if section.kind is SectionKind.PLANAR_SQUARE:
        return float(y[2] - section.plane_offset)
    return float(_kernels._section_value(y[0], y[1], y[2], p.zeta, p.gamma,
                                         p.beta, _kernels.SECTION_CASIMIR, 0.0))


def distance_gradient(section: SectionSpec, y: State3) -> np.ndarray:
    y = as_state(y)
    if section.kind is SectionKind.PLANAR_SQUARE:
        return np.array([0.0, 0.0, 1.0])
    ze, ga, be = section.params.zeta, section.params.gamma, section.params.beta
    return -2.0 * np.array([
        2.0 * ze * y[0],
        2.0 * y[1],
        2.0 * be * y[2] + be * (ga + ze),
    ])


def membership(section: SectionSpec, y: State3, *, tol: float = 1e-7) -> bool:
    """Whether y lies on the section set proper (surface plus side conditions)."""
    y = as_state(y)
    if abs(signed_distance(section, y)) > tol * (1.0 + float(y @ y)):
        return False
    if section.kind is SectionKind.PLANAR_SQUARE:
        u1, u2 = _in_plane(section, y)
        return bool(max(abs(u1), abs(u2)) <= section.half_width)
    down = eval_field(section.params, Perturbation.none(), y) @ \
        distance_gradient(section, y)
    return bool(down <= 0.0)


def in_clip_square(section: SectionSpec, y: State3) -> bool:
    """The clipping condition |(O^t y)_1|, |(O^t y)_2| <= half_width.

    On the curved section this is reported as a flag on returns, never
    enforced; unperturbed crossings essentially never satisfy it at the
    default width, and the census records the observed fraction.
    """
    u1, u2 = _in_plane(section, y)
    return bool(max(abs(u1), abs(u2)) <= section.half_width)


def _in_plane(section: SectionSpec, y: np.ndarray) -> tuple:
    O = section.rotation_O
    u1 = O[0, 0] * y[0] + O[1, 0] * y[1]
    u2 = O[0, 1] * y[0] + O[1, 1] * y[1]
    return float(u1), float(u2)


def _require_calibration(section: SectionSpec) -> CasimirCalibration:
    if section.calibration is None:
        raise CalibrationError(
            "curved section used without calibration; build with calibrated=True")
    return section.calibration


def to_chart(section: SectionSpec, y: State3, *,
             surface_tol: float = _SURFACE_TOL) -> SectionPoint:
    y = as_state(y)
    p = section.params
    if section.kind is SectionKind.PLANAR_SQUARE:
        # slightly looser than crossing_tol to absorb dense-output slop
        if abs(signed_distance(section, y)) > 1e-7 * (1.0 + abs(float(y[2]))):
            raise DomainError("point is not on the section plane")
        u1, u2 = _in_plane(section, y)
        return SectionPoint(chart=(u1, u2), ambient=y.copy())
    cal = _require_calibration(section)
    status, r, v, comp = _kernels.to_chart(y[0], y[1], y[2], p.zeta, p.gamma,
                                           p.beta, surface_tol)
    if status == 5:
        raise DomainError("point is not on the section surface")
    if status == 4:
        raise DomainError("point lies on the component boundary y1 = 0")
    if status != 0:
        raise DomainError(f"no leaf arc through this point (status {status})")
    u = cal.normalize(r)
    if u < -_QUOTIENT_BAND or u > 1.0 + _QUOTIENT_BAND:
        raise OutOfFoliationError(
            f"leaf coordinate {u:.4f} outside the calibrated range [0, 1]")
    u = min(max(u, 0.0), 1.0)
    return SectionPoint(chart=(u, v), ambient=y.copy(),
                        component_index=1 if comp > 0 else 2)


def to_ambient(section: SectionSpec, point: Union[SectionPoint, tuple]) -> np.ndarray:
    if isinstance(point, SectionPoint):
        u, v = point.chart
        comp = point.component_index
    else:
        u, v = point[0], point[1]
        comp = point[2] if len(point) > 2 else None
    p = section.params
    if section.kind is SectionKind.PLANAR_SQUARE:
        O = section.rotation_O
        xy = u * O[:2, 0] + v * O[:2, 1]
        return np.array([xy[0], xy[1], section.plane_offset])
    cal = _require_calibration(section)
    if comp not in (1, 2):
        raise DomainError("curved-section chart needs component_index 1 or 2")
    if u < -_QUOTIENT_BAND or u > 1.0 + _QUOTIENT_BAND:
        raise OutOfFoliationError(
            f"leaf coordinate {u:.4f} outside the calibrated range [0, 1]")
    r = cal.denormalize(min(max(u, 0.0), 1.0))
    status, a, b, c = _kernels.to_ambient(r, v, 1 if comp == 1 else -1,
                                          p.zeta, p.gamma, p.beta)
    if status != 0:
        raise DomainError(
            f"arclength {v:.6g} outside the leaf arc at u = {u:.4f}")
    return np.array([a, b, c])


def chart(section: SectionSpec, value, direction: str):
    """Chart map in either direction; `direction` is 'to_chart' or 'to_ambient'."""
    if direction == "to_chart":
        return to_chart(section, value)
    if direction == "to_ambient":
        return to_ambient(section, value)
    raise DomainError(f"unknown chart direction {direction!r}")


def quotient_project(section: SectionSpec, x: SectionPoint) -> float:
    """Collapse a section point along its stable leaf to a scalar.

    Curved section: the signed normalized leaf coordinate, positive on
    component 1 and negative on component 2, ranging over [-1, 1] with
    |u| = 1 on the saddle leaf. Planar section: the expanding chart
    coordinate rescaled so the square maps onto [-1/2, 1/2].
    """
    if section.kind is SectionKind.CASIMIR_SURFACE:
        _require_calibration(section)
        u = x.chart[0]
        if u < -1e-9 or u > 1.0 + 1e-9:
            raise OutOfFoliationError(f"leaf coordinate {u:.4f} outside [0, 1]")
        u = min(max(u, 0.0), 1.0)
        return u if x.component_index == 1 else -u
    u = x.chart[0]
    if abs(u) > section.half_width * (1.0 + 1e-9):
        raise OutOfFoliationError(
            f"chart coordinate {u:.4f} outside the square of half-width "
            f"{section.half_width}")
    return u * (0.5 / section.half_width)


def leaf_point(section: SectionSpec, u_signed: float, frac: float = 0.5) -> SectionPoint:
    """Representative ambient point of the leaf with signed coordinate u_signed,
    at the given fraction of the arc length. The transversal curve
    {frac = const} crosses every leaf exactly once, which is what the
    empirical quotient-map fitting samples."""
    if not 0.0 <= frac <= 1.0:
        raise DomainError("frac must lie in [0, 1]")
    cal = _require_calibration(section)
    comp = 1 if u_signed >= 0 else 2
    u = abs(u_signed)
    if u > 1.0 + 1e-12:
        raise OutOfFoliationError(f"|u| = {u:.4f} exceeds 1")
    p = section.params
    r = cal.denormalize(min(u, 1.0))
    st, lo, hi, length = _kernels.leaf_arc(r, p.zeta, p.gamma, p.beta)
    if st != 0:
        raise CalibrationError(f"no leaf arc at u = {u:.4f}")
    ambient = to_ambient(section, (u, frac * length, comp))
    return SectionPoint(chart=(u, frac * length), ambient=ambient,
                        component_index=comp)


def symmetry_apply(y: State3) -> np.ndarray:
    """The order-two symmetry (y1, y2, y3) -> (-y1, -y2, y3)."""
    y = as_state(y)
    return np.array([-y[0], -y[1], y[2]])


def section_to_dict(section: SectionSpec) -> dict:
    """JSON-ready description, including calibration so a deserialized
    section reproduces charts without re-running the census."""
    d = {
        "kind": section.kind.value,
        "params": {"zeta": section.params.zeta, "gamma": section.params.gamma,
                   "beta": section.params.beta},
        "half_width": section.half_width,
        "rotation_O": section.rotation_O.tolist(),
    }
    cal = section.calibration
    if cal is not None:
        d["calibration"] = {
            "r_star": cal.r_star,
            "r_top": cal.r_top,
            "census_min": cal.census_min,
            "census_max": cal.census_max,
            "census_n": cal.census_n,
            "mean_return": cal.mean_return,
            "min_return": cal.min_return,
            "max_return": cal.max_return,
            "clip_fraction": cal.clip_fraction,
            "leaf_grid": cal.leaf_grid.tolist(),
        }
    return d


def section_from_dict(d: dict) -> SectionSpec:
    params = LorenzParams(zeta=d["params"]["zeta"], gamma=d["params"]["gamma"],
                          beta=d["params"]["beta"])
    cal = None
    if "calibration" in d:
        c = d["calibration"]
        cal = CasimirCalibration(
            r_star=c["r_star"], r_top=c["r_top"], census_min=c["census_min"],
            census_max=c["census_max"], census_n=c["census_n"],
            mean_return=c["mean_return"], min_return=c["min_return"],
            max_return=c["max_return"], clip_fraction=c["clip_fraction"],
            leaf_grid=np.asarray(c["leaf_grid"]),
        )
    return SectionSpec(kind=SectionKind(d["kind"]), params=params,
                       rotation_O=np.asarray(d["rotation_O"]),
                       half_width=d["half_width"], calibration=cal)
