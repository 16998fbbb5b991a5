"""One-dimensional interval map families for the quotient dynamics.

Four analytic families plus one data-driven one share a single spec type:
a two-branch map of [-1/2, 1/2] with a singular derivative at 0, a
two-branch cusp map of [0, 1] with critical point u0, the signed assembly
of two cusp pieces on [-1, 1], a smooth change of coordinates that makes a
cusp map uniformly expanding, and a knot-interpolated map recovered from
simulated section returns.  All evaluation is closed-form or cached, and
array-valued helpers back the operator discretizations elsewhere.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.special import roots_legendre

from .errors import (ConfigError, DomainError, InvalidPerturbationError,
                     OrbitCapturedError, UnreliableFitError)
from .flow_integrator import IntegratorConfig, return_map
from .pdmp import _lenient_chart
from .sections import (SectionKind, SectionSpec, leaf_point, quotient_project,
                       to_ambient)
from .vector_fields import LorenzParams, Perturbation

__all__ = [
    "MapKind",
    "PerturbationFamily",
    "CuspCoefficients",
    "IntervalMapSpec",
    "ClosenessReport",
    "QuotientFit",
    "default_cusp_coefficients",
    "make_classical_lorenz",
    "make_cusp_piece",
    "make_combined",
    "make_empirical",
    "eval_map",
    "eval_array",
    "derivative_array",
    "branch_intervals",
    "critical_points",
    "make_perturbed_family",
    "vertical_transition_density",
    "conjugate_by_W",
    "w_value",
    "w_inverse",
    "w_density",
    "closeness_report",
    "fit_empirical_quotient",
    "leaf_diameters",
    "map_to_dict",
    "map_from_dict",
    "export_empirical_csv",
]


class MapKind(Enum):
    CLASSICAL_LORENZ = "classical_lorenz"
    CUSP_PIECE = "cusp_piece"
    COMBINED_TBAR = "combined_tbar"
    CONJUGATED = "conjugated"
    EMPIRICAL = "empirical"


class PerturbationFamily(Enum):
    VERTICAL_ADDITIVE = "vertical_additive"
    COEFFICIENT_MODULATED = "coefficient_modulated"


# Fractions of the branch lengths over which the cusp local forms are
# blended into the edge local forms.  The rising branch follows its edge
# form until just below u0 and the falling branch leaves the cusp form
# right away; this keeps the conjugated map expanding on a dense grid.
_LEFT_BLEND_FRACTION = 0.055
_RIGHT_BLEND_FRACTION = 1.0 / 15.0

_W_PANELS = 2048
_W_GL_ORDER = 20


@dataclass(frozen=True)
class CuspCoefficients:
    """Edge and cusp expansion coefficients of a two-branch cusp map.

    The rising branch behaves like a*u + b*u^(1+c) at the left endpoint and
    like 1 - A*(u0-u)^B below the critical point; the falling branch starts
    as 1 - A'*(u-u0)^B' and ends like a'*(1-u) + b'*(1-u)^(1+c').
    """

    a: float = 1.5
    b: float = 1.0
    c: float = 2.0
    A: float = 1.0
    B: float = 0.75
    A_prime: float = 1.0
    B_prime: float = 0.75
    a_prime: float = 0.5
    b_prime: float = 1.0
    c_prime: float = 2.0
    u0: float = 0.55

    def validate(self) -> None:
        if not (self.a > 1.0 and self.c > 1.0 and self.b > 0.0):
            raise DomainError("rising edge needs a > 1, c > 1, b > 0")
        if not (self.A > 0.0 and self.A_prime > 0.0):
            raise DomainError("cusp amplitudes must be positive")
        if not (0.0 < self.B < 1.0 and 0.0 < self.B_prime < 1.0):
            raise DomainError("cusp exponents must lie in (0, 1)")
        if not (0.0 < self.a_prime < 1.0):
            raise DomainError("falling edge slope a' must lie in (0, 1)")
        if not (self.b_prime > 0.0 and self.c_prime > 1.0):
            raise DomainError("falling edge needs b' > 0, c' > 1")
        if not (0.0 < self.u0 < 1.0):
            raise DomainError("critical point u0 must be interior to (0, 1)")

    @property
    def b_star(self) -> float:
        return max(self.B, self.B_prime)


def default_cusp_coefficients() -> CuspCoefficients:
    return CuspCoefficients()


@dataclass(frozen=True)
class IntervalMapSpec:
    """Immutable description of one interval map; fields depend on `kind`.

    `vertical_shift` post-composes the map with a shift that is reflected
    back into the codomain at the endpoints, which is how the additive
    perturbation family is represented for every kind.
    """

    kind: MapKind
    domain: Tuple[float, float]
    x0: Optional[float] = None
    alpha: Optional[float] = None
    g_coeffs: Optional[Tuple[float, ...]] = None
    cusp: Optional[CuspCoefficients] = None
    piece1: Optional[CuspCoefficients] = None
    piece2: Optional[CuspCoefficients] = None
    base: Optional["IntervalMapSpec"] = None
    gamma_bar: Optional[float] = None
    beta_bar: Optional[float] = None
    branches: Optional[Tuple[Tuple[Tuple[float, ...], Tuple[float, ...]], ...]] = None
    vertical_shift: float = 0.0


@dataclass(frozen=True)
class ClosenessReport:
    """Branchwise distance diagnostics between a base map and a perturbed one."""

    horizontal_gap: float
    vertical_gap: float
    branch_crossing: bool
    holder_constant: float
    holder_exponent: float


@dataclass(frozen=True)
class QuotientFit:
    """Empirical quotient map extracted from section returns.

    `residual` is the largest disagreement between the fitted map and the
    measured image coordinate at leaf points away from the representatives
    used for fitting; `contraction_scale` is the largest spread of image
    coordinates observed across a single leaf, the natural yardstick for
    that residual.
    """

    map_spec: IntervalMapSpec
    residual: float
    contraction_scale: float
    n_dropped: int
    n_total: int
    breakpoints: Tuple[float, ...]
    n_residual_leaves: int


# ---------------------------------------------------------------------------
# constructors

def make_classical_lorenz(alpha: float = 0.5,
                          g_coeffs: Optional[Sequence[float]] = None
                          ) -> IntervalMapSpec:
    """Two increasing branches on [-1/2, 1/2] with |T'(u)| = |u|^(alpha-1) G(|u|).

    G is a polynomial with the given coefficients (constant term first).
    The default G is the constant alpha * 2^alpha, which makes both
    branches map onto the full interval.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    if g_coeffs is None:
        g_coeffs = (alpha * 2.0 ** alpha,)
    g = tuple(float(v) for v in g_coeffs)
    if len(g) == 0:
        raise DomainError("profile needs at least one coefficient")
    spec = IntervalMapSpec(kind=MapKind.CLASSICAL_LORENZ, domain=(-0.5, 0.5),
                           x0=0.0, alpha=float(alpha), g_coeffs=g)
    us = np.linspace(1e-9, 0.5, 513)
    gv = _polyval(g, us)
    if np.any(gv <= 0.0):
        raise DomainError("profile must be positive on [0, 1/2]")
    _check_monotone_branches(spec)
    return spec


def make_cusp_piece(coeffs: Optional[CuspCoefficients] = None,
                    **overrides) -> IntervalMapSpec:
    """Continuous two-branch cusp map of [0, 1] rising to 1 at u0."""
    c = coeffs if coeffs is not None else CuspCoefficients()
    if overrides:
        c = replace(c, **overrides)
    c.validate()
    spec = IntervalMapSpec(kind=MapKind.CUSP_PIECE, domain=(0.0, 1.0),
                           x0=c.u0, cusp=c)
    _check_monotone_branches(spec)
    _check_value_range(spec)
    return spec


def make_combined(piece1: Optional[CuspCoefficients] = None,
                  piece2: Optional[CuspCoefficients] = None) -> IntervalMapSpec:
    """Signed assembly of two cusp pieces on [-1, 1].

    Coordinates keep their sign below the critical leaf and change
    component above it; built from one identical pair of pieces the map
    is odd.
    """
    p1 = piece1 if piece1 is not None else CuspCoefficients()
    p2 = piece2 if piece2 is not None else p1
    p1.validate()
    p2.validate()
    spec = IntervalMapSpec(kind=MapKind.COMBINED_TBAR, domain=(-1.0, 1.0),
                           x0=p1.u0, piece1=p1, piece2=p2)
    _check_monotone_branches(spec)
    return spec


def make_empirical(branches: Sequence[Tuple[Sequence[float], Sequence[float]]],
                   domain: Optional[Tuple[float, float]] = None,
                   x0: Optional[float] = None) -> IntervalMapSpec:
    """Map defined by per-branch knot tables with monotone cubic interpolation."""
    packed = []
    for us, ts in branches:
        ua = tuple(float(v) for v in us)
        ta = tuple(float(v) for v in ts)
        if len(ua) != len(ta):
            raise DomainError("knot tables must have equal length")
        if len(ua) < 2:
            raise DomainError("each branch needs at least two knots")
        if np.any(np.diff(ua) <= 0.0):
            raise DomainError("branch knots must be strictly increasing in u")
        packed.append((ua, ta))
    if not packed:
        raise DomainError("at least one branch is required")
    packed.sort(key=lambda br: br[0][0])
    for left, right in zip(packed, packed[1:]):
        if left[0][-1] >= right[0][0]:
            raise DomainError("branch knot ranges must not overlap")
    if domain is None:
        domain = (packed[0][0][0], packed[-1][0][-1])
    return IntervalMapSpec(kind=MapKind.EMPIRICAL,
                           domain=(float(domain[0]), float(domain[1])),
                           x0=x0, branches=tuple(packed))


# ---------------------------------------------------------------------------
# evaluation

def _polyval(coeffs: Tuple[float, ...], x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    for c in reversed(coeffs):
        out = out * x + c
    return out


def _classical_arrays(spec: IntervalMapSpec, u: np.ndarray):
    alpha = spec.alpha
    g = spec.g_coeffs
    au = np.abs(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        integral = np.zeros_like(au)
        for k, ck in enumerate(g):
            integral += ck * au ** (alpha + k) / (alpha + k)
        val = np.where(u >= 0.0, integral - 0.5, 0.5 - integral)
        der = au ** (alpha - 1.0) * _polyval(g, au)
    return val, der


def _cusp_arrays(c: CuspCoefficients, u: np.ndarray):
    val = np.empty_like(u)
    der = np.empty_like(u)
    left = u <= c.u0
    with np.errstate(divide="ignore", invalid="ignore"):
        if np.any(left):
            ul = u[left]
            d = c.u0 - ul
            f0 = c.a * ul + c.b * ul ** (1.0 + c.c)
            f0d = c.a + c.b * (1.0 + c.c) * ul ** c.c
            f1 = 1.0 - c.A * d ** c.B
            f1d = c.A * c.B * d ** (c.B - 1.0)
            dl = _LEFT_BLEND_FRACTION * c.u0
            w = np.clip((ul - (c.u0 - dl)) / dl, 0.0, 1.0)
            s = w * w * (3.0 - 2.0 * w)
            sd = 6.0 * w * (1.0 - w) / dl
            val[left] = (1.0 - s) * f0 + s * f1
            der[left] = (1.0 - s) * f0d + s * f1d + sd * (f1 - f0)
        right = ~left
        if np.any(right):
            ur = u[right]
            d = ur - c.u0
            one = 1.0 - ur
            f2 = 1.0 - c.A_prime * d ** c.B_prime
            f2d = -c.A_prime * c.B_prime * d ** (c.B_prime - 1.0)
            f3 = c.a_prime * one + c.b_prime * one ** (1.0 + c.c_prime)
            f3d = -c.a_prime - c.b_prime * (1.0 + c.c_prime) * one ** c.c_prime
            dr = _RIGHT_BLEND_FRACTION * (1.0 - c.u0)
            w = np.clip(d / dr, 0.0, 1.0)
            s = w * w * (3.0 - 2.0 * w)
            sd = 6.0 * w * (1.0 - w) / dr
            val[right] = (1.0 - s) * f2 + s * f3
            der[right] = (1.0 - s) * f2d + s * f3d + sd * (f3 - f2)
    return val, der


def _combined_arrays(spec: IntervalMapSpec, u: np.ndarray):
    val = np.empty_like(u)
    der = np.empty_like(u)
    pos = u >= 0.0
    if np.any(pos):
        up = u[pos]
        v1, d1 = _cusp_arrays(spec.piece1, up)
        inner = up <= spec.piece1.u0
        val[pos] = np.where(inner, v1, -v1)
        der[pos] = np.where(inner, d1, -d1)
    neg = ~pos
    if np.any(neg):
        un = -u[neg]
        v2, d2 = _cusp_arrays(spec.piece2, un)
        inner = un <= spec.piece2.u0
        # value -T2(-u) on the inner side, +T2(-u) outside; d/du flips sign
        val[neg] = np.where(inner, -v2, v2)
        der[neg] = np.where(inner, d2, -d2)
    return val, der


@lru_cache(maxsize=64)
def _branch_interpolators(branches):
    interps = []
    for us, ts in branches:
        interps.append(PchipInterpolator(np.asarray(us), np.asarray(ts),
                                         extrapolate=True))
    if len(branches) > 1:
        cuts = [0.5 * (left[0][-1] + right[0][0])
                for left, right in zip(branches, branches[1:])]
    else:
        cuts = []
    return tuple(interps), tuple(cuts)


def _empirical_arrays(spec: IntervalMapSpec, u: np.ndarray):
    interps, cuts = _branch_interpolators(spec.branches)
    idx = np.searchsorted(np.asarray(cuts), u) if cuts else np.zeros(u.shape, int)
    val = np.empty_like(u)
    der = np.empty_like(u)
    for i, itp in enumerate(interps):
        m = idx == i
        if np.any(m):
            val[m] = itp(u[m])
            der[m] = itp.derivative()(u[m])
    return val, der


def _reflect_into(y: np.ndarray, lo: float, hi: float):
    """Single endpoint reflection; adequate for shifts below the domain length."""
    hi_mask = y > hi
    lo_mask = y < lo
    y = np.where(hi_mask, 2.0 * hi - y, y)
    y = np.where(lo_mask, 2.0 * lo - y, y)
    return y, hi_mask | lo_mask


def _eval_arrays(spec: IntervalMapSpec, u: np.ndarray):
    u = np.asarray(u, dtype=float)
    if spec.kind is MapKind.CLASSICAL_LORENZ:
        val, der = _classical_arrays(spec, u)
    elif spec.kind is MapKind.CUSP_PIECE:
        val, der = _cusp_arrays(spec.cusp, u)
    elif spec.kind is MapKind.COMBINED_TBAR:
        val, der = _combined_arrays(spec, u)
    elif spec.kind is MapKind.CONJUGATED:
        w = _w_transform(spec.gamma_bar, spec.beta_bar)
        ub = np.clip(w.inverse(u), 0.0, 1.0)
        bval, bder = _eval_arrays(spec.base, ub)
        bval_c = np.clip(bval, 0.0, 1.0)
        val = w.forward(bval_c)
        with np.errstate(divide="ignore", invalid="ignore"):
            der = w.density(bval_c) * bder / w.density(ub)
    elif spec.kind is MapKind.EMPIRICAL:
        val, der = _empirical_arrays(spec, u)
    else:  # pragma: no cover
        raise DomainError(f"unknown map kind {spec.kind}")
    if spec.vertical_shift != 0.0:
        lo, hi = spec.domain
        val, reflected = _reflect_into(val + spec.vertical_shift, lo, hi)
        der = np.where(reflected, -der, der)
    return val, der


def eval_array(spec: IntervalMapSpec, u) -> np.ndarray:
    """Vectorized map values; no domain or critical-point policing."""
    return _eval_arrays(spec, np.asarray(u, dtype=float))[0]


def derivative_array(spec: IntervalMapSpec, u) -> np.ndarray:
    """Vectorized map derivatives; singular points come back infinite."""
    return _eval_arrays(spec, np.asarray(u, dtype=float))[1]


def critical_points(spec: IntervalMapSpec) -> Tuple[float, ...]:
    """Interior points where the derivative is undefined or blows up."""
    if spec.kind is MapKind.CLASSICAL_LORENZ:
        return (0.0,)
    if spec.kind is MapKind.CUSP_PIECE:
        return (spec.cusp.u0,)
    if spec.kind is MapKind.COMBINED_TBAR:
        return (spec.piece1.u0, -spec.piece2.u0)
    if spec.kind is MapKind.CONJUGATED:
        w = _w_transform(spec.gamma_bar, spec.beta_bar)
        return tuple(float(w.forward(c)) for c in critical_points(spec.base))
    return ()


def eval_map(spec: IntervalMapSpec, u: float) -> Tuple[float, float]:
    """Value and derivative at one point, with domain and singularity checks."""
    u = float(u)
    lo, hi = spec.domain
    if u < lo or u > hi:
        raise DomainError(f"u = {u:.6g} outside the domain [{lo}, {hi}]")
    for c in critical_points(spec):
        if u == c:
            raise DomainError(
                f"u = {u:.6g} is a critical point; the derivative blows up")
    val, der = _eval_arrays(spec, np.array([u]))
    return float(val[0]), float(der[0])


def branch_intervals(spec: IntervalMapSpec) -> Tuple[Tuple[float, float], ...]:
    """Maximal monotone pieces of the unshifted map, left to right."""
    if spec.kind is MapKind.CLASSICAL_LORENZ:
        return ((-0.5, 0.0), (0.0, 0.5))
    if spec.kind is MapKind.CUSP_PIECE:
        return ((0.0, spec.cusp.u0), (spec.cusp.u0, 1.0))
    if spec.kind is MapKind.COMBINED_TBAR:
        u1 = spec.piece1.u0
        u2 = spec.piece2.u0
        return ((-1.0, -u2), (-u2, u1), (u1, 1.0))
    if spec.kind is MapKind.CONJUGATED:
        w = _w_transform(spec.gamma_bar, spec.beta_bar)
        return tuple((float(w.forward(a)), float(w.forward(b)))
                     for a, b in branch_intervals(spec.base))
    return tuple((br[0][0], br[0][-1]) for br in spec.branches)


def _branch_grid(interval: Tuple[float, float], n: int) -> np.ndarray:
    a, b = interval
    pad = (b - a) * 1e-7
    return np.linspace(a + pad, b - pad, n)


def _clip_active_mask(spec: IntervalMapSpec, u: np.ndarray) -> np.ndarray:
    if spec.vertical_shift == 0.0:
        return np.zeros(u.shape, dtype=bool)
    raw = eval_array(replace(spec, vertical_shift=0.0), u) + spec.vertical_shift
    lo, hi = spec.domain
    return (raw > hi) | (raw < lo)


def _check_monotone_branches(spec: IntervalMapSpec, n: int = 1025,
                             exempt_clip: bool = False) -> None:
    for interval in branch_intervals(spec):
        us = _branch_grid(interval, n)
        vals = eval_array(spec, us)
        keep = np.isfinite(vals)
        if exempt_clip:
            keep &= ~_clip_active_mask(spec, us)
        us_k = us[keep]
        vals_k = vals[keep]
        if len(vals_k) < 3:
            continue
        d = np.diff(vals_k)
        # orientation from the majority; demand strictness in it
        if np.count_nonzero(d > 0) >= np.count_nonzero(d < 0):
            bad = d <= 0.0
        else:
            bad = d >= 0.0
        if np.any(bad):
            j = int(np.argmax(bad))
            raise InvalidPerturbationError(
                f"branch on [{interval[0]:.4g}, {interval[1]:.4g}] loses strict "
                f"monotonicity near u = {us_k[j]:.6g}")


def _check_value_range(spec: IntervalMapSpec, n: int = 2049) -> None:
    lo, hi = spec.domain
    for interval in branch_intervals(spec):
        vals = eval_array(spec, _branch_grid(interval, n))
        vals = vals[np.isfinite(vals)]
        if vals.size and (vals.min() < lo - 1e-9 or vals.max() > hi + 1e-9):
            raise DomainError("map values leave the domain interval")


# ---------------------------------------------------------------------------
# perturbation families

def _coerce_family(family) -> PerturbationFamily:
    if isinstance(family, PerturbationFamily):
        return family
    try:
        return PerturbationFamily(str(family))
    except ValueError:
        raise DomainError(f"unknown perturbation family {family!r}") from None


def make_perturbed_family(base: IntervalMapSpec, eta: float,
                          family) -> IntervalMapSpec:
    """One member of a perturbation family at noise value eta.

    The additive family shifts values and reflects them at the domain
    endpoints, so the transition kernel of the induced random map has
    support exactly the eta-ball around the unperturbed image and constant
    density there.  The coefficient family rescales the edge and cusp
    amplitudes by (1 + eta) and moves the critical point by eta/2.
    """
    family = _coerce_family(family)
    eta = float(eta)
    if eta == 0.0:
        return base
    lo, hi = base.domain
    if abs(eta) >= hi - lo:
        raise InvalidPerturbationError("shift exceeds the domain length")
    if family is PerturbationFamily.VERTICAL_ADDITIVE:
        shifted = replace(base, vertical_shift=base.vertical_shift + eta)
        _check_monotone_branches(shifted, exempt_clip=True)
        return shifted
    if base.kind is MapKind.CUSP_PIECE:
        new = _modulate(base.cusp, eta)
        spec = replace(base, cusp=new, x0=new.u0)
    elif base.kind is MapKind.COMBINED_TBAR:
        p1 = _modulate(base.piece1, eta)
        p2 = _modulate(base.piece2, eta)
        spec = replace(base, piece1=p1, piece2=p2, x0=p1.u0)
    else:
        raise DomainError(
            "coefficient modulation needs cusp coefficients to modulate")
    _check_monotone_branches(spec)
    return spec


def _modulate(c: CuspCoefficients, eta: float) -> CuspCoefficients:
    out = replace(c, a=c.a * (1.0 + eta), A=c.A * (1.0 + eta),
                  A_prime=c.A_prime * (1.0 + eta),
                  a_prime=c.a_prime * (1.0 + eta), u0=c.u0 + eta / 2.0)
    try:
        out.validate()
    except DomainError as exc:
        raise InvalidPerturbationError(
            f"modulation by eta = {eta:.4g} breaks a coefficient "
            f"constraint: {exc}") from exc
    return out


def vertical_transition_density(spec: IntervalMapSpec, x: float, y: float,
                                epsilon: float) -> float:
    """Density of the additive family's transition kernel at (x, y).

    Uniform noise of amplitude epsilon sends x to T(x) + eta, so the
    density is 1/(2 epsilon) on the epsilon-ball around T(x) and zero
    elsewhere.
    """
    if epsilon <= 0.0:
        raise DomainError("epsilon must be positive")
    t = float(eval_array(spec, np.array([float(x)]))[0])
    return 1.0 / (2.0 * epsilon) if abs(float(y) - t) <= epsilon else 0.0


# ---------------------------------------------------------------------------
# the expanding change of coordinates

class _WTransform:
    """Cached distribution function with density N e^(-g x) x^b (1-x)^b."""

    def __init__(self, gamma_bar: float, beta_bar: float):
        self.gamma_bar = gamma_bar
        self.beta_bar = beta_bar

        def w(s):
            return math.exp(-gamma_bar * s) * s ** beta_bar * (1.0 - s) ** beta_bar

        total, _ = quad(w, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
        self.n_const = 1.0 / total

        t = np.linspace(0.0, 1.0, _W_PANELS + 1)
        x = 0.5 * (1.0 - np.cos(np.pi * t))
        x[0], x[-1] = 0.0, 1.0
        nodes, weights = roots_legendre(_W_GL_ORDER)
        mid = 0.5 * (x[1:] + x[:-1])
        half = 0.5 * (x[1:] - x[:-1])
        pts = mid[:, None] + half[:, None] * nodes[None, :]
        with np.errstate(invalid="ignore"):
            vals = (np.exp(-gamma_bar * pts) * pts ** beta_bar
                    * (1.0 - pts) ** beta_bar)
        masses = half * (vals @ weights)
        cum = np.concatenate(([0.0], np.cumsum(masses)))
        cum /= cum[-1]
        cum[-1] = 1.0
        self._x = x
        self._fwd = PchipInterpolator(x, cum, extrapolate=False)
        self._inv = PchipInterpolator(cum, x, extrapolate=False)

    def forward(self, x):
        return self._fwd(np.clip(x, 0.0, 1.0))

    def inverse(self, z):
        return self._inv(np.clip(z, 0.0, 1.0))

    def density(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            return (self.n_const * np.exp(-self.gamma_bar * x)
                    * x ** self.beta_bar * (1.0 - x) ** self.beta_bar)


@lru_cache(maxsize=8)
def _w_transform(gamma_bar: float, beta_bar: float) -> _WTransform:
    return _WTransform(gamma_bar, beta_bar)


def conjugate_by_W(spec: IntervalMapSpec, gamma_bar: float,
                   beta_bar: float) -> IntervalMapSpec:
    """Conjugate a map of [0, 1] by the expanding change of coordinates.

    For cusp-coefficient bases the parameters are screened first: beta_bar
    must stay below 1/B* - 1 and gamma_bar above
    (1 + beta_bar) / (1 - u0) * log(1/a'), the sufficient threshold for
    uniform expansion of the conjugated map.
    """
    gamma_bar = float(gamma_bar)
    beta_bar = float(beta_bar)
    if gamma_bar <= 0.0 or beta_bar <= 0.0:
        raise ConfigError("conjugation parameters must be positive")
    lo, hi = spec.domain
    if abs(lo) > 1e-12 or abs(hi - 1.0) > 1e-12:
        raise ConfigError("the change of coordinates is defined on [0, 1]")
    coeffs = spec.cusp if spec.kind is MapKind.CUSP_PIECE else None
    if coeffs is not None:
        upper = 1.0 / coeffs.b_star - 1.0
        if not beta_bar < upper:
            raise ConfigError(
                f"beta_bar = {beta_bar:.4g} not below 1/B* - 1 = {upper:.4g}")
        threshold = ((1.0 + beta_bar) / (1.0 - coeffs.u0)
                     * math.log(1.0 / coeffs.a_prime))
        if not gamma_bar > threshold:
            raise ConfigError(
                f"gamma_bar = {gamma_bar:.4g} not above the expansion "
                f"threshold {threshold:.4g}")
    w = _w_transform(gamma_bar, beta_bar)
    x0 = float(w.forward(spec.x0)) if spec.x0 is not None else None
    return IntervalMapSpec(kind=MapKind.CONJUGATED, domain=(0.0, 1.0), x0=x0,
                           base=spec, gamma_bar=gamma_bar, beta_bar=beta_bar)


def w_value(spec: IntervalMapSpec, x):
    """The change of coordinates of a conjugated spec, vectorized."""
    _require_conjugated(spec)
    return _w_transform(spec.gamma_bar, spec.beta_bar).forward(x)


def w_inverse(spec: IntervalMapSpec, z):
    _require_conjugated(spec)
    return _w_transform(spec.gamma_bar, spec.beta_bar).inverse(z)


def w_density(spec: IntervalMapSpec, x):
    _require_conjugated(spec)
    return _w_transform(spec.gamma_bar, spec.beta_bar).density(x)


def _require_conjugated(spec: IntervalMapSpec) -> None:
    if spec.kind is not MapKind.CONJUGATED:
        raise DomainError("spec does not carry a change of coordinates")


# ---------------------------------------------------------------------------
# closeness diagnostics

def _monotone_core(us: np.ndarray, vals: np.ndarray):
    """Longest strictly monotone run, as the invertible part of a branch."""
    d = np.diff(vals)
    sign = 1.0 if np.count_nonzero(d > 0) >= np.count_nonzero(d < 0) else -1.0
    good = sign * d > 0.0
    best_len, best_start = 0, 0
    start = 0
    for i in range(len(good)):
        if not good[i]:
            start = i + 1
            continue
        if i + 1 - start > best_len:
            best_len = i + 1 - start
            best_start = start
    sl = slice(best_start, best_start + best_len + 1)
    return us[sl], vals[sl]


def _inverse_on(us: np.ndarray, vals: np.ndarray, z: np.ndarray) -> np.ndarray:
    if vals[0] > vals[-1]:
        return np.interp(z, vals[::-1], us[::-1])
    return np.interp(z, vals, us)


def closeness_report(base: IntervalMapSpec, perturbed: IntervalMapSpec,
                     grid_n: int, eta: Optional[float] = None
                     ) -> ClosenessReport:
    """Distance diagnostics between two maps with matching branch structure.

    The horizontal gap compares inverse branches and their derivatives on
    the common image range; the vertical gap compares derivatives outside
    the smallest integer-multiple-of-eta ball that contains the displaced
    critical point; the crossing flag reports a sign change of the branch
    difference away from the branch ends.  The Hoelder pair (C_h, iota) is
    fitted on reciprocal derivative differences of the base map, with pair
    separations concentrated toward the singular branch ends.
    """
    if grid_n < 8:
        raise DomainError("grid_n must be at least 8")
    ib = branch_intervals(base)
    ip = branch_intervals(perturbed)
    if len(ib) != len(ip):
        raise DomainError("maps do not share a branch count")
    if eta is None:
        dv = perturbed.vertical_shift - base.vertical_shift
        if dv != 0.0:
            eta = dv
        elif base.x0 is not None and perturbed.x0 is not None:
            eta = 2.0 * (perturbed.x0 - base.x0)
        else:
            eta = 0.0
    eta = float(eta)

    horizontal = 0.0
    crossing = False
    vertical = 0.0
    if base.x0 is not None and perturbed.x0 is not None and eta != 0.0:
        k = math.ceil(abs(perturbed.x0 - base.x0) / abs(eta) - 1e-12)
        radius = k * abs(eta)
    else:
        radius = 0.0

    for (ab, bb), (ap, bp) in zip(ib, ip):
        m = 4 * grid_n
        ub = _branch_grid((ab, bb), m)
        vb = eval_array(base, ub)
        up = _branch_grid((ap, bp), m)
        vp = eval_array(perturbed, up)
        ub_c, vb_c = _monotone_core(ub, vb)
        up_c, vp_c = _monotone_core(up, vp)
        zlo = max(min(vb_c[0], vb_c[-1]), min(vp_c[0], vp_c[-1]))
        zhi = min(max(vb_c[0], vb_c[-1]), max(vp_c[0], vp_c[-1]))
        if zhi > zlo:
            span = zhi - zlo
            z = np.linspace(zlo + 1e-9 * span, zhi - 1e-9 * span, grid_n)
            xb = _inverse_on(ub_c, vb_c, z)
            xp = _inverse_on(up_c, vp_c, z)
            horizontal = max(horizontal, float(np.max(np.abs(xb - xp))))
            with np.errstate(divide="ignore"):
                rb = 1.0 / derivative_array(base, xb)
                rp = 1.0 / derivative_array(perturbed, xp)
            ok = np.isfinite(rb) & np.isfinite(rp)
            if np.any(ok):
                horizontal = max(horizontal,
                                 float(np.max(np.abs(rb[ok] - rp[ok]))))

        # vertical comparison at identical abscissae, off the moved-cusp ball
        us = _branch_grid((max(ab, ap), min(bb, bp)), m)
        if us[0] < us[-1]:
            keep = np.ones(us.shape, dtype=bool)
            if base.x0 is not None:
                keep &= np.abs(us - base.x0) > radius
            keep &= ~_clip_active_mask(base, us)
            keep &= ~_clip_active_mask(perturbed, us)
            if np.any(keep):
                db = derivative_array(base, us[keep])
                dp = derivative_array(perturbed, us[keep])
                ok = np.isfinite(db) & np.isfinite(dp)
                if np.any(ok):
                    vertical = max(vertical,
                                   float(np.max(np.abs(dp[ok] - db[ok]))))

            diff = eval_array(perturbed, us) - eval_array(base, us)
            interior = slice(2, -2)
            d = diff[interior]
            d = d[np.abs(d) > 1e-12]
            if d.size and d.min() < 0.0 < d.max():
                crossing = True

    iota, c_h = _fit_holder(base)
    return ClosenessReport(horizontal_gap=horizontal, vertical_gap=vertical,
                           branch_crossing=crossing, holder_constant=c_h,
                           holder_exponent=iota)


def _fit_holder(spec: IntervalMapSpec):
    crits = critical_points(spec)
    slope_x, slope_y = [], []
    env_pairs = []
    for (a, b) in branch_intervals(spec):
        span = b - a
        ends = [e for e in (a, b)
                if any(abs(e - c) < 1e-9 * max(1.0, abs(c)) for c in crits)]
        for e in ends:
            ds = np.geomspace(span * 1e-5, span * 0.45, 48)
            pts = e + ds if e == a else e - ds
            pts = np.sort(pts)
            _collect_pairs(spec, pts, slope_x, slope_y, env_pairs)
        uni = _branch_grid((a, b), 64)
        _collect_pairs(spec, uni, None, None, env_pairs)
        if not ends:
            _collect_pairs(spec, uni, slope_x, slope_y, None)
    if len(slope_x) >= 2:
        coef = np.polyfit(np.asarray(slope_x), np.asarray(slope_y), 1)
        iota = float(coef[0])
    else:
        iota = 1.0
    iota = min(max(iota, 1e-6), 1.0)
    c_h = 0.0
    for dx, dr in env_pairs:
        c_h = max(c_h, dr / dx ** iota)
    return iota, c_h


def _collect_pairs(spec, pts, slope_x, slope_y, env_pairs):
    with np.errstate(divide="ignore"):
        recip = 1.0 / derivative_array(spec, pts)
    ok = np.isfinite(recip)
    pts, recip = pts[ok], recip[ok]
    if len(pts) < 2:
        return
    dx = np.diff(pts)
    dr = np.abs(np.diff(recip))
    good = (dx > 0.0) & (dr > 1e-300)
    if slope_x is not None:
        slope_x.extend(np.log(dx[good]))
        slope_y.extend(np.log(dr[good]))
    if env_pairs is not None:
        env_pairs.extend(zip(dx[good], dr[good]))


# ---------------------------------------------------------------------------
# fitting the quotient map from section returns

def _leaf_representative(section: SectionSpec, u_signed: float,
                         frac: float) -> np.ndarray:
    if section.kind is SectionKind.PLANAR_SQUARE:
        hw = section.half_width
        u_chart = 2.0 * hw * u_signed
        v = (2.0 * frac - 1.0) * hw
        return to_ambient(section, (u_chart, v))
    return leaf_point(section, u_signed, frac).ambient


def _quotient_of_return(params: LorenzParams, pert: Perturbation,
                        section: SectionSpec, y: np.ndarray,
                        cfg: Optional[IntegratorConfig]) -> float:
    ev = return_map(params, pert, section, y, cfg)
    return quotient_project(section, _lenient_chart(section, ev.point))


def fit_empirical_quotient(params: LorenzParams, pert: Perturbation,
                           section: SectionSpec, transversal_n: int,
                           cfg: Optional[IntegratorConfig] = None
                           ) -> QuotientFit:
    """Fit the quotient interval map from one return per stable leaf.

    Leaf representatives sit on the mid transversal; the image coordinate
    of each return gives one knot.  Branch boundaries are declared where a
    value increment exceeds ten times the local median increment.  Extra
    off-transversal points on a subset of leaves yield the held-out
    semi-conjugacy residual and the leaf-image spread that calibrates it.
    Captured orbits are dropped; more than ten percent of them abort the fit.
    """
    if transversal_n < 8:
        raise DomainError("transversal_n must be at least 8")
    planar = section.kind is SectionKind.PLANAR_SQUARE
    lo, hi = (-0.5, 0.5) if planar else (-1.0, 1.0)
    step = (hi - lo) / transversal_n
    us = lo + (np.arange(transversal_n) + 0.5) * step

    knots_u, knots_t = [], []
    dropped = 0
    for u in us:
        y = _leaf_representative(section, float(u), 0.5)
        try:
            t = _quotient_of_return(params, pert, section, y, cfg)
        except OrbitCapturedError:
            dropped += 1
            continue
        knots_u.append(float(u))
        knots_t.append(t)
    if dropped > 0.1 * transversal_n:
        raise UnreliableFitError(
            f"{dropped} of {transversal_n} orbits were captured; "
            f"the fitted map would not be trustworthy")

    ua = np.asarray(knots_u)
    ta = np.asarray(knots_t)
    cut_after = _detect_jumps(ua, ta)
    branches = []
    breakpoints = []
    start = 0
    for j in list(cut_after) + [len(ua) - 1]:
        seg = slice(start, j + 1)
        if j + 1 - start >= 3:
            branches.append((tuple(ua[seg]), tuple(ta[seg])))
        if j < len(ua) - 1:
            breakpoints.append(0.5 * (ua[j] + ua[j + 1]))
        start = j + 1
    if not branches:
        raise UnreliableFitError("no branch long enough to interpolate")
    spec = make_empirical(branches, domain=(lo, hi),
                          x0=breakpoints[0] if breakpoints else None)

    residual, spread, n_leaves = _holdout_residual(
        params, pert, section, cfg, spec, ua, ta, breakpoints, step)
    return QuotientFit(map_spec=spec, residual=residual,
                       contraction_scale=spread, n_dropped=dropped,
                       n_total=transversal_n,
                       breakpoints=tuple(breakpoints),
                       n_residual_leaves=n_leaves)


def _detect_jumps(ua: np.ndarray, ta: np.ndarray, window: int = 10,
                  factor: float = 10.0) -> np.ndarray:
    """Indices i such that the step t[i] -> t[i+1] is a jump."""
    dt = np.abs(np.diff(ta))
    if dt.size == 0:
        return np.array([], dtype=int)
    local = np.empty_like(dt)
    for i in range(len(dt)):
        a = max(0, i - window)
        b = min(len(dt), i + window + 1)
        local[i] = np.median(dt[a:b])
    fallback = max(np.median(dt), 1e-12)
    local = np.where(local > 0.0, local, fallback)
    return np.nonzero(dt > factor * local)[0]


def _holdout_residual(params, pert, section, cfg, spec, ua, ta,
                      breakpoints, step):
    n = len(ua)
    stride = max(1, n // 32)
    residual = 0.0
    spread = 0.0
    used = 0
    for i in range(0, n, stride):
        u = ua[i]
        if any(abs(u - bp) < 2.0 * step for bp in breakpoints):
            continue
        images = [ta[i]]
        try:
            for frac in (0.25, 0.75):
                y = _leaf_representative(section, float(u), frac)
                images.append(_quotient_of_return(params, pert, section, y, cfg))
        except OrbitCapturedError:
            continue
        fitted = float(eval_array(spec, np.array([u]))[0])
        residual = max(residual,
                       max(abs(img - fitted) for img in images[1:]))
        spread = max(spread, max(images) - min(images))
        used += 1
    return residual, spread, used


def leaf_diameters(params: LorenzParams, section: SectionSpec,
                   u_signed: float, *, n_points: int = 5, n_iterates: int = 5,
                   pert: Optional[Perturbation] = None,
                   cfg: Optional[IntegratorConfig] = None) -> np.ndarray:
    """Diameters of a leaf point cloud under successive section returns.

    Entry 0 is the spread of the starting points along the leaf; entry k
    the diameter after k returns.  A shrinking sequence witnesses that the
    return dynamics contracts the stable leaves.
    """
    if n_points < 2:
        raise DomainError("need at least two points on the leaf")
    if pert is None:
        pert = Perturbation.none()
    fracs = np.linspace(0.1, 0.9, n_points)
    cloud = [_leaf_representative(section, float(u_signed), float(f))
             for f in fracs]
    out = [_cloud_diameter(cloud)]
    for _ in range(n_iterates):
        cloud = [return_map(params, pert, section, y, cfg).point
                 for y in cloud]
        out.append(_cloud_diameter(cloud))
    return np.asarray(out)


def _cloud_diameter(cloud) -> float:
    pts = np.asarray(cloud)
    d = 0.0
    for i in range(len(pts)):
        diff = pts[i + 1:] - pts[i]
        if diff.size:
            d = max(d, float(np.max(np.sqrt(np.sum(diff * diff, axis=1)))))
    return d


# ---------------------------------------------------------------------------
# serialization

def map_to_dict(spec: IntervalMapSpec) -> dict:
    d = {"kind": spec.kind.value, "domain": list(spec.domain),
         "x0": spec.x0, "vertical_shift": spec.vertical_shift}
    if spec.kind is MapKind.CLASSICAL_LORENZ:
        d["alpha"] = spec.alpha
        d["g_coeffs"] = list(spec.g_coeffs)
    elif spec.kind is MapKind.CUSP_PIECE:
        d["coefficients"] = _cusp_to_dict(spec.cusp)
    elif spec.kind is MapKind.COMBINED_TBAR:
        d["piece1"] = _cusp_to_dict(spec.piece1)
        d["piece2"] = _cusp_to_dict(spec.piece2)
    elif spec.kind is MapKind.CONJUGATED:
        d["gamma_bar"] = spec.gamma_bar
        d["beta_bar"] = spec.beta_bar
        d["base"] = map_to_dict(spec.base)
    else:
        d["branches"] = [{"u": list(us), "t": list(ts)}
                         for us, ts in spec.branches]
    return d


def _cusp_to_dict(c: CuspCoefficients) -> dict:
    return {"a": c.a, "b": c.b, "c": c.c, "A": c.A, "B": c.B,
            "A_prime": c.A_prime, "B_prime": c.B_prime, "a_prime": c.a_prime,
            "b_prime": c.b_prime, "c_prime": c.c_prime, "u0": c.u0}


def map_from_dict(d: dict) -> IntervalMapSpec:
    kind = MapKind(d["kind"])
    shift = float(d.get("vertical_shift", 0.0))
    if kind is MapKind.CLASSICAL_LORENZ:
        spec = make_classical_lorenz(d["alpha"], d["g_coeffs"])
    elif kind is MapKind.CUSP_PIECE:
        spec = make_cusp_piece(CuspCoefficients(**d["coefficients"]))
    elif kind is MapKind.COMBINED_TBAR:
        spec = make_combined(CuspCoefficients(**d["piece1"]),
                             CuspCoefficients(**d["piece2"]))
    elif kind is MapKind.CONJUGATED:
        spec = conjugate_by_W(map_from_dict(d["base"]), d["gamma_bar"],
                              d["beta_bar"])
    else:
        spec = make_empirical([(br["u"], br["t"]) for br in d["branches"]],
                              domain=tuple(d["domain"]), x0=d.get("x0"))
    if shift != 0.0:
        spec = replace(spec, vertical_shift=shift)
    return spec


def export_empirical_csv(spec: IntervalMapSpec,
                         target: Union[str, TextIO]) -> None:
    """Write the knots of a knot-table map as CSV rows (u, T(u))."""
    if spec.kind is not MapKind.EMPIRICAL:
        raise DomainError("only knot-table maps export to CSV")
    own = isinstance(target, str)
    fh = open(target, "w", newline="") if own else target
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["u", "T(u)"])
        for us, ts in spec.branches:
            for u, t in zip(us, ts):
                writer.writerow([repr(float(u)), repr(float(t))])
    finally:
        if own:
            fh.close()
