import numpy as np
import pytest

from impulse_lorenz import (
    DomainError,
    IntegratorConfig,
    OrbitCapturedError,
    Perturbation,
    PerturbationMode,
    casimir,
    first_crossing,
    integrate,
    return_map,
    sample_states,
    signed_distance,
    symmetry_apply,
    to_chart,
)
from impulse_lorenz import _rk
from impulse_lorenz.flow_integrator import first_crossing_generic, return_section_point
from impulse_lorenz.vector_fields import eval_field

NONE = Perturbation.none()


class TestConfig:
    def test_defaults(self):
        cfg = IntegratorConfig()
        assert cfg.rel_tol == 1e-9
        assert cfg.max_step == 0.25

    def test_positivity(self):
        with pytest.raises(DomainError):
            IntegratorConfig(rel_tol=0.0)
        with pytest.raises(DomainError):
            IntegratorConfig(max_time=-1.0)

    def test_crossing_tol_tied_to_abs_tol(self):
        # localization cannot be finer than what the dense output supports
        with pytest.raises(DomainError):
            IntegratorConfig(abs_tol=1e-11, crossing_tol=1e-6)


def test_integrate_zero_time_copies(params):
    y0 = np.array([1.0, 2.0, 3.0])
    out = integrate(params, NONE, y0, 0.0)
    np.testing.assert_array_equal(out, y0)
    assert out is not y0


def test_integrate_rejects_negative_time(params):
    with pytest.raises(DomainError):
        integrate(params, NONE, np.zeros(3), -1.0)


def test_integrate_matches_reference_engine(params):
    rhs = lambda t, y: eval_field(params, NONE, y)
    y0 = np.array([2.0, 3.0, -20.0])
    _, ref = _rk.advance(rhs, y0, 0.0, 10.0)
    out = integrate(params, NONE, y0, 10.0)
    assert np.max(np.abs(out - ref)) < 1e-12


def test_flow_property_over_subintervals(params):
    y0 = np.array([-3.0, 4.0, -25.0])
    whole = integrate(params, NONE, y0, 2.0)
    split = integrate(params, NONE, integrate(params, NONE, y0, 0.8), 1.2)
    assert np.max(np.abs(whole - split)) < 1e-7


def test_flow_commutes_with_the_symmetry(params):
    # the field is exactly equivariant in floating point, so the two
    # trajectories agree step for step
    y0 = np.array([2.0, 3.0, -20.0])
    a = integrate(params, NONE, symmetry_apply(y0), 3.0)
    b = symmetry_apply(integrate(params, NONE, y0, 3.0))
    assert np.max(np.abs(a - b)) < 1e-13


def test_sample_states_consistency(params):
    y0 = np.array([1.0, 1.0, -30.0])
    ts = np.linspace(0.0, 2.0, 9)
    states = sample_states(params, NONE, y0, ts)
    assert states.shape == (9, 3)
    np.testing.assert_array_equal(states[0], y0)
    end = integrate(params, NONE, y0, 2.0)
    assert np.max(np.abs(states[-1] - end)) < 1e-9


def test_sample_states_validates_times(params):
    with pytest.raises(DomainError):
        sample_states(params, NONE, np.zeros(3), np.array([0.0, 2.0, 1.0]))


def test_localized_mode_requires_section(params):
    pert = Perturbation(PerturbationMode.SECTION_LOCALIZED, 0.1)
    with pytest.raises(DomainError):
        integrate(params, pert, np.zeros(3), 1.0)


def test_localized_forcing_perturbs_near_the_section(params, casimir_section):
    y0 = np.array([2.0, 3.0, -20.0])
    pert = Perturbation(PerturbationMode.SECTION_LOCALIZED, 0.5, bump_width=50.0)
    plain = integrate(params, NONE, y0, 1.0)
    forced = integrate(params, pert, y0, 1.0, section=casimir_section)
    assert 1e-6 < np.max(np.abs(forced - plain)) < 5.0


def test_constant_field_crossing_oracle():
    # dy/dt = (0,0,-1) from height 5: the plane y3 = 0 is hit at t = 5
    rhs = lambda t, y: np.array([0.0, 0.0, -1.0])
    s = lambda y: float(y[2])
    ev = first_crossing_generic(rhs, s, np.array([0.0, 0.0, 5.0]),
                                IntegratorConfig(max_time=10.0))
    assert ev.time == pytest.approx(5.0, abs=1e-9)
    assert abs(ev.point[2]) < 1e-9
    assert ev.direction == -1


def test_curved_crossing_lands_on_the_surface(params, casimir_section):
    ev = first_crossing(params, NONE, casimir_section, np.array([2.0, 3.0, -20.0]))
    assert ev.time > 0
    assert ev.direction == -1
    assert abs(signed_distance(casimir_section, ev.point)) < 1e-6
    assert 250.0 < casimir(ev.point) < 1444.0


def test_curved_crossing_agrees_with_reference_search(params, casimir_section):
    y0 = np.array([2.0, 3.0, -20.0])
    ev = first_crossing(params, NONE, casimir_section, y0)
    rhs = lambda t, y: eval_field(params, NONE, y)
    s = lambda y: signed_distance(casimir_section, y)
    ref = first_crossing_generic(rhs, s, y0, IntegratorConfig())
    assert ev.time == pytest.approx(ref.time, abs=1e-7)
    assert np.max(np.abs(ev.point - ref.point)) < 1e-5


def test_planar_crossing_outside_square(params, planar_section):
    # the attractor dips below y3 = -37 only on deep saddle passages, so
    # start just above the plane where the field still points down
    ev = first_crossing(params, NONE, planar_section, np.array([0.5, 0.5, -36.9]),
                        require_inside=False)
    assert ev.time < 0.5
    assert abs(ev.point[2] - (-37.0)) < 1e-6
    assert ev.direction == -1


def test_planar_capture_when_square_never_hit(params, planar_section):
    cfg = IntegratorConfig(max_time=20.0)
    with pytest.raises(OrbitCapturedError):
        first_crossing(params, NONE, planar_section, np.array([2.0, 3.0, -20.0]),
                       cfg, require_inside=True)


def test_return_map_iterates_on_the_section(params, casimir_section):
    ev = first_crossing(params, NONE, casimir_section, np.array([2.0, 3.0, -20.0]))
    ev2 = return_map(params, NONE, casimir_section, ev.point)
    assert 0.01 < ev2.time < 3.0
    assert abs(signed_distance(casimir_section, ev2.point)) < 1e-6


def test_return_map_rejects_off_section_start(params, casimir_section):
    with pytest.raises(DomainError):
        return_map(params, NONE, casimir_section, np.array([5.0, 5.0, -20.0]))


def test_return_section_point_gives_chart(params, casimir_section):
    ev = first_crossing(params, NONE, casimir_section, np.array([2.0, 3.0, -20.0]))
    start = to_chart(casimir_section, ev.point)
    x, tau = return_section_point(params, NONE, casimir_section, start)
    assert 0.0 <= x.chart[0] <= 1.0
    assert x.component_index in (1, 2)
    assert tau > 0.0
