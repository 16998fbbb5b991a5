import json
import math

import numpy as np
import pytest

from impulse_lorenz import (
    CalibrationError,
    DomainError,
    OutOfFoliationError,
    Perturbation,
    SectionKind,
    build_section,
    casimir,
    eval_field,
    in_clip_square,
    jacobian,
    leaf_point,
    membership,
    quotient_project,
    section_from_dict,
    section_to_dict,
    signed_distance,
    symmetry_apply,
    to_ambient,
    to_chart,
)
from impulse_lorenz import _kernels
from impulse_lorenz.sections import SectionSpec, distance_gradient


def test_frame_is_orthogonal(planar_section):
    O = planar_section.rotation_O
    assert np.abs(O.T @ O - np.eye(3)).max() < 1e-12


def test_frame_triangularizes_the_saddle_jacobian(params, planar_section):
    O = planar_section.rotation_O
    J = jacobian(params, Perturbation.none(), params.saddle_point())
    R = O.T @ J @ O
    lam_u = (-11.0 + math.sqrt(1201.0)) / 2.0
    lam_ss = (-11.0 - math.sqrt(1201.0)) / 2.0
    np.testing.assert_allclose(np.diag(R), [lam_u, lam_ss, -params.beta], rtol=1e-12)
    # lower-triangular: the expanding direction appears only in column 1
    for i, j in ((0, 1), (0, 2), (1, 2)):
        assert abs(R[i, j]) < 1e-9
    # the in-plane block is non-normal, so the (1,0) entry cannot vanish
    assert abs(R[1, 0]) > 1.0


def test_first_column_expands(params, planar_section):
    # positive projection of the unstable eigenvector on the first axis
    O = planar_section.rotation_O
    lam_u = (-11.0 + math.sqrt(1201.0)) / 2.0
    e_u = np.array([params.zeta, lam_u + params.zeta, 0.0])
    e_u /= np.linalg.norm(e_u)
    assert float(e_u @ O[:, 0]) > 0.0


def test_planar_distance_and_membership(planar_section):
    center = np.array([0.0, 0.0, -37.0])
    assert signed_distance(planar_section, center) == 0.0
    assert membership(planar_section, center)
    above = center + np.array([0.0, 0.0, 2.5])
    assert signed_distance(planar_section, above) == 2.5

    edge = to_ambient(planar_section, (0.6, 0.0))
    assert abs(signed_distance(planar_section, edge)) < 1e-12
    assert not membership(planar_section, edge)  # outside the half-width square
    assert not in_clip_square(planar_section, edge)


def test_planar_chart_round_trip(planar_section):
    for u, v in ((0.0, 0.0), (0.2, -0.3), (-0.49, 0.49)):
        y = to_ambient(planar_section, (u, v))
        x = to_chart(planar_section, y)
        assert x.component_index is None
        np.testing.assert_allclose(x.chart, (u, v), atol=1e-12)
        np.testing.assert_allclose(to_ambient(planar_section, x), y, atol=1e-12)


def test_planar_chart_rejects_off_plane_points(planar_section):
    with pytest.raises(DomainError):
        to_chart(planar_section, np.array([0.0, 0.0, -30.0]))


def test_planar_quotient_rescales_to_half(planar_section):
    x = to_chart(planar_section, to_ambient(planar_section, (0.3, -0.1)))
    assert quotient_project(planar_section, x) == pytest.approx(0.3, abs=1e-12)
    far = to_chart(planar_section, to_ambient(planar_section, (0.8, 0.0)))
    with pytest.raises(OutOfFoliationError):
        quotient_project(planar_section, far)


def test_symmetry_is_an_involution(rng):
    for _ in range(5):
        y = rng.uniform(-30, 30, 3)
        np.testing.assert_array_equal(symmetry_apply(symmetry_apply(y)), y)
    np.testing.assert_array_equal(
        symmetry_apply(np.array([0.0, 0.0, -38.0])), [0.0, 0.0, -38.0])


def test_curved_distance_vanishes_where_radius_is_extremal(params, casimir_section):
    # the saddle is a zero, and so is every orbit point where d|y|^2/dt = 0
    assert signed_distance(casimir_section, params.saddle_point()) == 0.0
    y = np.array([3.0, 1.0, -10.0])
    s = signed_distance(casimir_section, y)
    f = eval_field(params, Perturbation.none(), y)
    assert s == pytest.approx(2.0 * float(f @ y), rel=1e-12)


def test_curved_gradient_matches_finite_differences(casimir_section, rng):
    h = 1e-6
    for _ in range(10):
        y = rng.uniform([-20, -20, -50], [20, 20, 5])
        g = distance_gradient(casimir_section, y)
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd = (signed_distance(casimir_section, y + e)
                  - signed_distance(casimir_section, y - e)) / (2 * h)
            assert g[j] == pytest.approx(fd, abs=1e-5)


class TestCalibration:
    def test_census_statistics(self, casimir_section):
        cal = casimir_section.calibration
        assert cal.census_n == 2000
        assert cal.r_top == 1444.0
        assert cal.r_star == pytest.approx(0.99 * cal.census_min, rel=1e-14)
        assert 250.0 < cal.census_min < 450.0
        assert 1250.0 < cal.census_max < 1444.0
        assert 0.6 < cal.mean_return < 0.9
        # grazing double-maxima produce rare short returns (observed 0.042)
        assert cal.min_return > 0.01
        assert cal.max_return < 3.0
        assert cal.clip_fraction < 0.01

    def test_leaf_grid_is_consistent(self, casimir_section):
        grid = casimir_section.calibration.leaf_grid
        assert grid.shape[1] == 4
        assert np.all(np.diff(grid[:, 0]) > 0)
        assert np.all(grid[:, 2] > grid[:, 1])  # each arc has positive extent
        assert np.all(grid[:, 3] > 0)

    def test_uncalibrated_section_refuses_charts(self, params):
        sec = build_section(SectionKind.CASIMIR_SURFACE, params, calibrated=False)
        with pytest.raises(CalibrationError):
            leaf_point(sec, 0.5)


def test_leaf_arc_frozen_values(params):
    # mid-range leaf, endpoints pinned by an independent root-finding scan
    st, lo, hi, length = _kernels.leaf_arc(400.0, params.zeta, params.gamma, params.beta)
    assert st == 0
    assert lo == pytest.approx(-15.4819, abs=1e-3)
    assert hi == pytest.approx(-4.5017, abs=1e-3)
    assert length == pytest.approx(18.1809, abs=1e-3)


def test_saddle_leaf_starts_at_the_saddle(params, casimir_section):
    # u = 1 is the sphere through the saddle; its arc begins there (y1 = y2 = 0)
    # endpoint resolved to ~1e-14 in y3; the sqrt graph turns that into ~1e-6
    x = leaf_point(casimir_section, 1.0, 0.0)
    np.testing.assert_allclose(x.ambient, params.saddle_point(), atol=5e-6)


def test_chart_round_trip_on_a_leaf_grid(casimir_section):
    for us in (0.05, 0.3, 0.7, 0.95, -0.2, -0.85):
        for frac in (0.1, 0.5, 0.9):
            x = leaf_point(casimir_section, us, frac)
            y = x.ambient
            assert abs(signed_distance(casimir_section, y)) < 1e-6 * (1 + casimir(y))
            back = to_chart(casimir_section, y)
            assert back.component_index == x.component_index
            assert back.chart[0] == pytest.approx(abs(us), abs=1e-9)
            assert back.chart[1] == pytest.approx(x.chart[1], abs=1e-9 * (1 + x.chart[1]))
            np.testing.assert_allclose(to_ambient(casimir_section, back), y, atol=1e-9)


def test_chart_is_symmetry_invariant(casimir_section):
    x = leaf_point(casimir_section, 0.6, 0.4)
    mirrored = to_chart(casimir_section, symmetry_apply(x.ambient))
    assert mirrored.component_index == 2
    assert mirrored.chart[0] == pytest.approx(x.chart[0], abs=1e-12)
    assert mirrored.chart[1] == pytest.approx(x.chart[1], abs=1e-9)
    # the signed quotient coordinate flips
    q = quotient_project(casimir_section, x)
    q_m = quotient_project(casimir_section, mirrored)
    assert q_m == pytest.approx(-q, abs=1e-12)


def test_quotient_signs_by_component(casimir_section):
    assert quotient_project(casimir_section, leaf_point(casimir_section, 0.5)) > 0
    assert quotient_project(casimir_section, leaf_point(casimir_section, -0.5)) < 0
    assert quotient_project(
        casimir_section, leaf_point(casimir_section, 1.0)) == pytest.approx(1.0)


def test_chart_rejects_off_surface_points(casimir_section):
    with pytest.raises(DomainError):
        to_chart(casimir_section, np.array([1.0, 1.0, 1.0]))


def test_chart_rejects_component_boundary(params, casimir_section):
    # y1 = 0 separates the two wings; the chart is undefined there
    with pytest.raises(DomainError):
        to_chart(casimir_section, params.saddle_point())


def test_chart_rejects_leaves_below_the_calibrated_range(params, casimir_section):
    cal = casimir_section.calibration
    r_low = 0.9 * cal.r_star
    st, lo, hi, length = _kernels.leaf_arc(r_low, params.zeta, params.gamma, params.beta)
    assert st == 0
    st2, a, b, c = _kernels.to_ambient(r_low, 0.4 * length, 1,
                                       params.zeta, params.gamma, params.beta)
    assert st2 == 0
    with pytest.raises(OutOfFoliationError):
        to_chart(casimir_section, np.array([a, b, c]))


def test_membership_on_the_curved_section(casimir_section):
    x = leaf_point(casimir_section, 0.5, 0.5)
    assert membership(casimir_section, x.ambient)
    assert not membership(casimir_section, np.array([1.0, 1.0, 1.0]))


def test_serialization_round_trip(casimir_section):
    d = section_to_dict(casimir_section)
    blob = json.dumps(d)  # must be JSON-clean
    sec = section_from_dict(json.loads(blob))
    assert sec.kind is SectionKind.CASIMIR_SURFACE
    np.testing.assert_array_equal(sec.rotation_O, casimir_section.rotation_O)
    assert sec.half_width == casimir_section.half_width
    cal0, cal1 = casimir_section.calibration, sec.calibration
    assert cal1.r_star == cal0.r_star
    assert cal1.census_max == cal0.census_max
    np.testing.assert_array_equal(cal1.leaf_grid, cal0.leaf_grid)
    # charts agree without any re-census
    x = leaf_point(sec, 0.35, 0.25)
    np.testing.assert_allclose(
        x.ambient, leaf_point(casimir_section, 0.35, 0.25).ambient, atol=1e-12)


def test_spec_validation():
    from impulse_lorenz import LorenzParams

    p = LorenzParams()
    with pytest.raises(DomainError):
        SectionSpec(kind=SectionKind.PLANAR_SQUARE, params=p,
                    rotation_O=np.eye(3) * 2.0)
    with pytest.raises(DomainError):
        SectionSpec(kind=SectionKind.PLANAR_SQUARE, params=p,
                    rotation_O=np.eye(3), half_width=0.0)
