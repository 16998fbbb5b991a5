"""Lorenz vector field in shifted coordinates, with impulsive forcing hooks.

The flow integrated throughout this package is the classical Lorenz system
written in coordinates whose origin sits at the center of the attracting
region, obtained from the usual (x1, x2, x3) variables by y3 = x3 - (gamma +
zeta):

    dy1/dt = -zeta*(y1 - y2)
    dy2/dt = -y1*y3 - zeta*y1 - y2
    dy3/dt =  y1*y2 - beta*y3 - beta*(gamma + zeta)

At the default parameters (zeta=10, gamma=28, beta=8/3) this is the chaotic
Lorenz'63 flow; the saddle equilibrium is c0 = (0, 0, -(gamma+zeta)).

Two forcing modes perturb the field by a constant vector H scaled by a noise
amplitude eta: everywhere (CONSTANT_ADDITIVE), or only inside a tubular
neighbourhood of a cross-section through a C^2 bump profile
(SECTION_LOCALIZED).

The squared norm C(y) = ||y||^2 decays along unperturbed orbits up to the
constant part of the field; `casimir_bound` gives the closed-form envelope
used by the drift diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol

import numpy as np

from .errors import DomainError

State3 = np.ndarray  # shape (3,), float64


class PerturbationMode(Enum):
    NONE = "none"
    CONSTANT_ADDITIVE = "constant_additive"
    SECTION_LOCALIZED = "section_localized"


class SupportsDistance(Protocol):
    """What a section must expose for localized forcing: a signed distance
    and its gradient, both evaluated in ambient coordinates."""

    def signed_distance(self, y: State3) -> float: ...

    def distance_gradient(self, y: State3) -> State3: ...


@dataclass(frozen=True)
class LorenzParams:
    """Parameter triple of the flow. All three must be positive."""

    zeta: float = 10.0
    gamma: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self):
        if not (self.zeta > 0 and self.gamma > 0 and self.beta > 0):
            raise DomainError("zeta, gamma, beta must all be positive")

    def saddle_point(self) -> State3:
        """Equilibrium below the attracting wings: (0, 0, -(gamma+zeta))."""
        return np.array([0.0, 0.0, -(self.gamma + self.zeta)])

    def affine_term(self) -> State3:
        """Constant part of the unperturbed field, (0, 0, -beta*(gamma+zeta))."""
        return np.array([0.0, 0.0, -self.beta * (self.gamma + self.zeta)])

    def contraction_rate(self) -> float:
        """min(1, zeta, beta): exponential rate in the squared-norm envelope."""
        return min(1.0, self.zeta, self.beta)


@dataclass(frozen=True)
class Perturbation:
    """Forcing descriptor: mode, amplitude eta, unit direction H, bump width.

    The effective forcing is eta * direction, times the bump profile in
    SECTION_LOCALIZED mode. `bump_width` is the half-width of the tubular
    support in signed-distance units.
    """

    mode: PerturbationMode = PerturbationMode.NONE
    eta: float = 0.0
    direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    bump_width: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,):
            raise DomainError("direction must be a 3-vector")
        if abs(float(d @ d) - 1.0) > 2e-12:
            raise DomainError("direction must be a unit vector (within 1e-12)")
        object.__setattr__(self, "direction", d)
        if not -1.0 <= self.eta <= 1.0:
            raise DomainError("eta must lie in [-1, 1]")
        if self.mode is PerturbationMode.SECTION_LOCALIZED and not self.bump_width > 0:
            raise DomainError("bump_width must be positive for localized forcing")

    @staticmethod
    def none() -> "Perturbation":
        return Perturbation(PerturbationMode.NONE, 0.0)

    @staticmethod
    def constant(eta: float, direction=(0.0, 0.0, 1.0)) -> "Perturbation":
        return Perturbation(PerturbationMode.CONSTANT_ADDITIVE, eta, np.asarray(direction, float))

    def with_eta(self, eta: float) -> "Perturbation":
        """Same mode/direction/width with a different amplitude."""
        return Perturbation(self.mode, eta, self.direction, self.bump_width)


def as_state(y) -> State3:
    y = np.asarray(y, dtype=float)
    if y.shape != (3,):
        raise DomainError(f"state must be a 3-vector, got shape {y.shape}")
    return y


def bump_profile(d: float, width: float) -> float:
    """C^2 compactly supported bump: (1 - (d/w)^2)^3 on |d| < w, else 0."""
    s = d / width
    if abs(s) >= 1.0:
        return 0.0
    return (1.0 - s * s) ** 3


def bump_profile_deriv(d: float, width: float) -> float:
    s = d / width
    if abs(s) >= 1.0:
        return 0.0
    return -6.0 * s * (1.0 - s * s) ** 2 / width


def _require_section(pert: Perturbation, section) -> None:
    if pert.mode is PerturbationMode.SECTION_LOCALIZED and section is None:
        raise DomainError("section-localized forcing needs a section instance")


def eval_field(
    params: LorenzParams,
    pert: Perturbation,
    y: State3,
    section: Optional[SupportsDistance] = None,
) -> State3:
    """Right-hand side of the flow at state y under the given forcing."""
    y = as_state(y)
    _require_section(pert, section)
    z, g, b = params.zeta, params.gamma, params.beta
    out = np.array(
        [
            -z * (y[0] - y[1]),
            -y[0] * y[2] - z * y[0] - y[1],
            y[0] * y[1] - b * y[2] - b * (g + z),
        ]
    )
    if pert.mode is PerturbationMode.CONSTANT_ADDITIVE:
        out += pert.eta * pert.direction
    elif pert.mode is PerturbationMode.SECTION_LOCALIZED:
        d = section.signed_distance(y)
        out += pert.eta * bump_profile(d, pert.bump_width) * pert.direction
    return out


def jacobian(
    params: LorenzParams,
    pert: Perturbation,
    y: State3,
    section: Optional[SupportsDistance] = None,
) -> np.ndarray:
    """3x3 derivative of `eval_field` with respect to the state.

    The constant forcing mode contributes nothing; the localized mode adds
    the rank-one term eta * b'(d) * H (grad d)^T.
    """
    y = as_state(y)
    _require_section(pert, section)
    z, b = params.zeta, params.beta
    J = np.array(
        [
            [-z, z, 0.0],
            [-y[2] - z, -1.0, -y[0]],
            [y[1], y[0], -b],
        ]
    )
    if pert.mode is PerturbationMode.SECTION_LOCALIZED:
        d = section.signed_distance(y)
        grad = section.distance_gradient(y)
        J += pert.eta * bump_profile_deriv(d, pert.bump_width) * np.outer(pert.direction, grad)
    return J


def casimir(y: State3) -> float:
    """Squared Euclidean norm of the state."""
    y = as_state(y)
    return float(y @ y)


def _forcing_norm_sup(params: LorenzParams, pert: Perturbation) -> float:
    """Supremum over the orbit of the norm of the constant field part.

    NONE: ||H0||. CONSTANT_ADDITIVE: ||H0 + eta*H||. SECTION_LOCALIZED: the
    bump takes values in [0, 1], and the norm is convex along the segment
    from H0 to H0 + eta*H, so the sup is attained at an endpoint.
    """
    h0 = params.affine_term()
    if pert.mode is PerturbationMode.NONE:
        return float(np.linalg.norm(h0))
    full = h0 + pert.eta * pert.direction
    if pert.mode is PerturbationMode.CONSTANT_ADDITIVE:
        return float(np.linalg.norm(full))
    return float(max(np.linalg.norm(h0), np.linalg.norm(full)))


def casimir_bound(params: LorenzParams, pert: Perturbation, y: State3, t: float) -> float:
    """Envelope for C(orbit(t)) starting from y:

        C(y)*exp(-m t) + (||H||/m)^2 * (1 + exp(-m t)),  m = min(1, zeta, beta)

    with ||H|| the worst-case norm of the constant field part under the given
    forcing. Monotone non-increasing in t, with asymptote (||H||/m)^2.
    """
    if t < 0:
        raise DomainError("t must be non-negative")
    if pert.mode is PerturbationMode.SECTION_LOCALIZED:
        raise DomainError("bound holds for constant forcing only")
    m = params.contraction_rate()
    h = _forcing_norm_sup(params, pert)
    decay = np.exp(-m * t)
    return casimir(y) * decay + (h / m) ** 2 * (1.0 + decay)
