import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst
from scipy import stats as sps

import impulse_lorenz as il
from impulse_lorenz.errors import DomainError
from impulse_lorenz.flow_integrator import IntegratorConfig, sample_states
from impulse_lorenz.noise_driver import (
    NoiseFamily,
    NoiseSpec,
    NoiseStream,
    draw_block,
)
from impulse_lorenz.pdmp import (
    BUILTIN_OBSERVABLES,
    EmpiricalCdf,
    collect_renewal_stats,
    drift_constants,
    empirical_return_cdf,
    export_path_csv,
    path_summary,
    renewal_stationary,
    segment_integrals,
    simulate_pdmp,
    step_chain,
    time_average,
)

Y0 = np.array([2.0, 3.0, -20.0])


def _spec(eps, seed=21):
    return NoiseSpec(family=NoiseFamily.UNIFORM_SYMMETRIC, epsilon=eps,
                     seed=seed)


@pytest.fixture(scope="module")
def chain_stats(params, casimir_section):
    """10k perturbed chain steps shared by the statistics tests."""
    stats, stream = collect_renewal_stats(
        params, casimir_section, Y0, NoiseStream(_spec(0.08)),
        n_steps=10000, burn_in=200)
    return stats, stream


def test_step_chain_zero_eta_matches_deterministic_map(params, casimir_section,
                                                       chain_stats):
    x = chain_stats[0].chain_points[0]
    nxt, tau = step_chain(params, casimir_section, x, 0.0)
    ev = il.return_map(params, il.Perturbation.none(), casimir_section, x)
    assert np.array_equal(nxt.ambient, ev.point)
    assert tau == ev.time


def test_step_chain_repeat_calls_identical(params, casimir_section,
                                           chain_stats):
    x = chain_stats[0].chain_points[3]
    a = step_chain(params, casimir_section, x, 0.0314)
    b = step_chain(params, casimir_section, x, 0.0314)
    assert np.array_equal(a[0].ambient, b[0].ambient)
    assert a[0].chart == b[0].chart
    assert a[1] == b[1]


def test_step_chain_rejects_off_section(params, casimir_section):
    from impulse_lorenz.sections import SectionPoint

    x = SectionPoint(chart=(0.5, 0.0), ambient=Y0.copy(), component_index=1)
    with pytest.raises(DomainError):
        step_chain(params, casimir_section, x, 0.0)


def test_chain_matches_simulate_hits(params, casimir_section, chain_stats):
    """Iterating step_chain reproduces simulate_pdmp's hit sequence."""
    x0 = chain_stats[0].chain_points[0]
    spec = _spec(0.08, seed=40)
    path = simulate_pdmp(params, casimir_section, x0.ambient,
                         NoiseStream(spec), 8.0)
    assert path.n_crossings >= 5
    etas = draw_block(spec, 0, path.n_crossings)
    x = x0
    for k in range(path.n_crossings):
        x, tau = step_chain(params, casimir_section, x, float(etas[k]))
        assert np.abs(x.ambient - path.section_hits[k].ambient).max() <= 1e-12
        assert abs(tau - path.return_times[k]) <= 1e-12


def test_simulate_path_bookkeeping(params, casimir_section):
    spec = _spec(0.05, seed=11)
    path = simulate_pdmp(params, casimir_section, Y0, NoiseStream(spec), 50.0)

    assert len(path.segments) == path.n_crossings + 1
    assert all(s.duration > 0 for s in path.segments)
    durs = sum(s.duration for s in path.segments)
    assert abs(durs - 50.0) <= 1e-9
    assert path.horizon == pytest.approx(50.0, abs=1e-12)
    # off-section start: the approach segment is not a return
    assert len(path.return_times) == path.n_crossings - 1
    assert path.noise_used == len(path.segments)
    assert path.mean_return == pytest.approx(path.return_times.mean())
    # each hit is the entry point of the following segment
    for k in range(path.n_crossings):
        assert np.array_equal(path.section_hits[k].ambient,
                              path.segments[k + 1].entry_point)
    # successive start times chain up
    for k in range(1, len(path.segments)):
        prev = path.segments[k - 1]
        assert path.segments[k].start_time == pytest.approx(
            prev.start_time + prev.duration, abs=1e-12)


def test_simulate_hits_lie_on_section(params, casimir_section):
    cfg = IntegratorConfig()
    path = simulate_pdmp(params, casimir_section, Y0,
                         NoiseStream(_spec(0.08, seed=9)), 30.0, cfg)
    for hit in path.section_hits:
        y = hit.ambient
        resid = abs(il.signed_distance(casimir_section, y))
        assert resid <= max(cfg.crossing_tol * 1e3, 1e-6 * (1.0 + y @ y))
        u, v = hit.chart
        assert 0.0 <= u <= 1.0
        assert abs(v) < 40.0
        assert hit.component_index in (1, 2)


def test_simulate_noise_coordinates_in_order(params, casimir_section):
    """Segment k runs under stream coordinate k, the cut tail included."""
    spec = _spec(0.08, seed=33)
    path = simulate_pdmp(params, casimir_section, Y0, NoiseStream(spec), 12.0)
    coords = draw_block(spec, 0, len(path.segments))
    for k, seg in enumerate(path.segments):
        assert seg.eta == coords[k]
    assert path.segments[0].eta == NoiseStream(spec).head()


def test_simulate_on_section_start_has_no_delay(params, casimir_section,
                                                chain_stats):
    spec = _spec(0.08, seed=52)
    y0 = chain_stats[0].chain_points[5].ambient
    path = simulate_pdmp(params, casimir_section, y0, NoiseStream(spec), 6.0)
    assert len(path.return_times) == path.n_crossings
    assert path.segments[0].eta == draw_block(spec, 0, 1)[0]
    assert np.array_equal(path.segments[0].entry_point, y0)


def test_simulate_epsilon_zero_matches_flow(params, casimir_section):
    # restart error at each crossing is below 1e-8; over two time units
    # the chaotic amplification keeps the endpoint gap under 1e-6
    path = simulate_pdmp(params, casimir_section, Y0,
                         NoiseStream(_spec(0.0, seed=3)), 2.0)
    direct = il.integrate(params, il.Perturbation.none(), Y0, 2.0)
    assert np.abs(path.final_state - direct).max() <= 1e-6
    assert all(s.eta == 0.0 for s in path.segments)


def test_simulate_short_horizon_is_single_cut_segment(params, casimir_section):
    path = simulate_pdmp(params, casimir_section, Y0,
                         NoiseStream(_spec(0.08)), 0.05)
    assert len(path.segments) == 1
    assert path.n_crossings == 0
    assert len(path.return_times) == 0
    assert path.noise_used == 1
    assert path.segments[0].duration == pytest.approx(0.05)
    with pytest.raises(DomainError):
        path.mean_return


def test_simulate_validation(params, casimir_section):
    with pytest.raises(DomainError):
        simulate_pdmp(params, casimir_section, Y0, NoiseStream(_spec(0.1)),
                      0.0)
    with pytest.raises(DomainError):
        simulate_pdmp(params, casimir_section, Y0, NoiseStream(_spec(0.1)),
                      5.0, pert_template=il.Perturbation.none())
    # a no-forcing template is fine when the noise is degenerate
    path = simulate_pdmp(params, casimir_section, Y0,
                         NoiseStream(_spec(0.0)), 1.0,
                         pert_template=il.Perturbation.none())
    assert path.horizon == pytest.approx(1.0)


def test_time_average_constant_is_exactly_one(params, casimir_section):
    path = simulate_pdmp(params, casimir_section, Y0,
                         NoiseStream(_spec(0.08)), 10.0)
    assert time_average(path, lambda y: 1.0) == 1.0


def test_time_average_epsilon_zero_casimir_oracle(params, casimir_section):
    """Birkhoff average of the squared norm against a single-solve Simpson
    quadrature of the unperturbed flow."""
    T = 5.0
    path = simulate_pdmp(params, casimir_section, Y0,
                         NoiseStream(_spec(0.0, seed=3)), T)
    avg = time_average(path, il.casimir, quadrature_dt=0.005)

    n = 20000
    ts = np.linspace(0.0, T, n + 1)
    states = sample_states(params, il.Perturbation.none(), Y0, ts)
    fs = (states ** 2).sum(axis=1)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    direct = (T / n) * (w @ fs) / 3.0 / T
    assert abs(avg - direct) <= 1e-6


def test_time_average_dt_halving(params, casimir_section):
    path = simulate_pdmp(params, casimir_section, Y0,
                         NoiseStream(_spec(0.08)), 10.0)
    a = time_average(path, lambda y: float(y[2]), 0.005)
    b = time_average(path, lambda y: float(y[2]), 0.0025)
    assert abs(a - b) < 1e-8


def test_segment_integrals_validation(params, casimir_section):
    path = simulate_pdmp(params, casimir_section, Y0,
                         NoiseStream(_spec(0.08)), 2.0)
    with pytest.raises(DomainError):
        segment_integrals(path, il.casimir, quadrature_dt=0.0)
    vals, durs = segment_integrals(path, lambda y: 1.0)
    assert np.array_equal(vals, durs)


def test_empirical_cdf_single_sample():
    cdf = empirical_return_cdf([0.7])
    assert cdf(0.699) == 0.0
    assert cdf(0.7) == 1.0
    assert cdf(10.0) == 1.0
    assert cdf.survival_integral == pytest.approx(0.7)


def test_empirical_cdf_step_shape():
    cdf = EmpiricalCdf([3.0, 1.0, 2.0])
    xs = np.array([0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0])
    np.testing.assert_allclose(cdf(xs),
                               [0, 1 / 3, 1 / 3, 2 / 3, 2 / 3, 1, 1])
    with pytest.raises(DomainError):
        EmpiricalCdf([])


@settings(max_examples=60, deadline=None)
@given(hst.lists(hst.floats(min_value=1e-3, max_value=1e3), min_size=1,
                 max_size=50))
def test_empirical_cdf_survival_equals_mean(samples):
    cdf = empirical_return_cdf(samples)
    assert cdf.survival_integral == pytest.approx(np.mean(samples), rel=1e-12)
    grid = np.linspace(0.0, 1e3 + 1, 77)
    vals = cdf(grid)
    assert np.all(np.diff(vals) >= 0)
    assert vals[-1] == 1.0


def test_epsilon_zero_return_times_from_fixed_point_equal(params,
                                                          casimir_section,
                                                          chain_stats):
    x = chain_stats[0].chain_points[8]
    taus = [step_chain(params, casimir_section, x, 0.0)[1] for _ in range(3)]
    assert taus[0] == taus[1] == taus[2]
    cdf = empirical_return_cdf(taus)
    assert cdf(taus[0] - 1e-12) == 0.0
    assert cdf(taus[0]) == 1.0


def test_collect_renewal_stats_contract(params, casimir_section, chain_stats):
    stats, stream = chain_stats
    assert len(stats.chain_points) == 10000
    assert len(stats.return_time_samples) == 10000
    assert stats.mean_return == pytest.approx(stats.return_time_samples.mean(),
                                              rel=1e-15)
    assert stats.return_time_samples.max() < IntegratorConfig().max_time
    # off-section start: one approach value plus burn-in plus samples
    assert stream.cursor == 1 + 200 + 10000
    cfg = IntegratorConfig()
    for x in stats.chain_points[::500]:
        resid = abs(il.signed_distance(casimir_section, x.ambient))
        assert resid <= max(cfg.crossing_tol * 1e3,
                            1e-6 * (1.0 + x.ambient @ x.ambient))


def test_collect_validation(params, casimir_section):
    with pytest.raises(DomainError):
        collect_renewal_stats(params, casimir_section, Y0,
                              NoiseStream(_spec(0.08)), n_steps=0)


def test_collect_burn_in_doubling(params, casimir_section):
    """Doubling the burn-in leaves the return-time statistics unchanged
    within sampling error."""
    a, _ = collect_renewal_stats(params, casimir_section, Y0,
                                 NoiseStream(_spec(0.08)), n_steps=1500,
                                 burn_in=200)
    b, _ = collect_renewal_stats(params, casimir_section, Y0,
                                 NoiseStream(_spec(0.08)), n_steps=1500,
                                 burn_in=400)
    se = (a.return_time_samples.std(ddof=1) / np.sqrt(1500)
          + b.return_time_samples.std(ddof=1) / np.sqrt(1500))
    assert abs(a.mean_return - b.mean_return) <= 4 * se


def test_renewal_stationary_normalization(params, casimir_section,
                                          chain_stats):
    stats, stream = chain_stats
    est = renewal_stationary(params, casimir_section, stats, lambda y: 1.0,
                             stream, 64)
    assert est.value == 1.0
    assert est.standard_error == 0.0
    assert est.n_samples == 64


def test_renewal_stationary_matches_time_average(params, casimir_section,
                                                 chain_stats):
    """The ratio estimator and the path average agree on y3 within three
    combined standard errors."""
    stats, stream = chain_stats
    f = lambda y: float(y[2])
    est = renewal_stationary(params, casimir_section, stats, f, stream, 300)
    path = simulate_pdmp(params, casimir_section, Y0,
                         NoiseStream(_spec(0.08, seed=71)), 300.0)
    summary = path_summary(path, observables={"y3": f}, quadrature_dt=0.01)
    ta = summary["observables"]["y3"]["value"]
    se_ta = summary["observables"]["y3"]["standard_error"]
    assert abs(ta - est.value) <= 3 * (est.standard_error + se_ta)


def test_renewal_stationary_epsilon_zero_consistent(params, casimir_section):
    stats0, stream0 = collect_renewal_stats(
        params, casimir_section, Y0, NoiseStream(_spec(0.0, seed=2)),
        n_steps=400, burn_in=100)
    f = lambda y: float(y[2])
    est = renewal_stationary(params, casimir_section, stats0, f, stream0, 400)
    path = simulate_pdmp(params, casimir_section, Y0,
                         NoiseStream(_spec(0.0, seed=2)), 300.0)
    summary = path_summary(path, observables={"y3": f})
    ta = summary["observables"]["y3"]["value"]
    se_ta = summary["observables"]["y3"]["standard_error"]
    assert abs(ta - est.value) <= 3 * (est.standard_error + se_ta)


def test_renewal_stationary_validation(params, casimir_section, chain_stats):
    stats, stream = chain_stats
    with pytest.raises(DomainError):
        renewal_stationary(params, casimir_section, stats, il.casimir, stream,
                           1)


def test_return_times_bounded_away_from_zero(chain_stats):
    taus = chain_stats[0].return_time_samples
    assert taus.min() > 0.05
    assert taus.max() < 3.0


def test_counting_rate_matches_mean_return(params, casimir_section,
                                           chain_stats):
    """Crossings per unit time approach the reciprocal mean return."""
    mean_ref = chain_stats[0].mean_return
    T = 1e4 * mean_ref
    path = simulate_pdmp(params, casimir_section, Y0,
                         NoiseStream(_spec(0.08, seed=77)), T)
    rate = path.n_crossings / T
    assert abs(rate * mean_ref - 1.0) <= 0.02


def test_transition_law_ignores_noise_history(params, casimir_section,
                                              chain_stats):
    """Two disjoint noise blocks from one point give the same next-state
    law (chi-square homogeneity on 8 equal-mass bins, 1% level)."""
    x = chain_stats[0].chain_points[17]
    spec = _spec(0.3, seed=5)
    ea = draw_block(spec, 0, 400)
    eb = draw_block(spec, 400, 400)
    ua = np.array([il.quotient_project(casimir_section,
                                       step_chain(params, casimir_section, x,
                                                  float(e))[0])
                   for e in ea])
    ub = np.array([il.quotient_project(casimir_section,
                                       step_chain(params, casimir_section, x,
                                                  float(e))[0])
                   for e in eb])
    edges = np.quantile(np.concatenate([ua, ub]), np.linspace(0, 1, 9))
    edges[0] -= 1e-9
    edges[-1] += 1e-9
    ca, _ = np.histogram(ua, edges)
    cb, _ = np.histogram(ub, edges)
    _, pv, _, _ = sps.chi2_contingency(np.vstack([ca, cb]))
    assert pv > 0.01


@pytest.mark.xfail(
    strict=True,
    reason="binned history independence is undetectable here: the "
    "per-step noise blur of the chart coordinates (< 0.02 at the "
    "largest admissible amplitude) is orders of magnitude below any "
    "workable bin width, so the coarse-grained chain keeps visible "
    "memory even though the exact-state chain is memoryless (see "
    "test_transition_law_ignores_noise_history)")
def test_markov_conditional_independence_coarse_bins(params, casimir_section):
    stats, _ = collect_renewal_stats(params, casimir_section, Y0,
                                     NoiseStream(_spec(0.3)), n_steps=4000,
                                     burn_in=200)
    us = np.array([il.quotient_project(casimir_section, x)
                   for x in stats.chain_points])
    bins = np.clip(((us + 1.0) * 4).astype(int), 0, 7)
    prev, cur, nxt = bins[:-2], bins[1:-1], bins[2:]
    counts = np.bincount(cur, minlength=8)
    worst = 1.0
    for c in np.argsort(counts)[::-1][:2]:
        m = cur == c
        tab = np.zeros((8, 8))
        for a, b in zip(prev[m], nxt[m]):
            tab[a, b] += 1
        keep_r = tab.sum(axis=1) >= 20
        keep_c = tab.sum(axis=0) >= 20
        sub = tab[np.ix_(keep_r, keep_c)]
        if sub.shape[0] > 1 and sub.shape[1] > 1:
            worst = min(worst, sps.chi2_contingency(sub)[1])
    assert worst > 0.01


def test_drift_constants(params):
    a, K = drift_constants(params, 0.1, 0.04)
    assert 0 < a < 1
    assert K > 0
    m = params.contraction_rate()
    h0 = np.linalg.norm(params.affine_term())
    a0, K0 = drift_constants(params, 0.0, 0.04)
    assert a0 == a
    assert K0 == pytest.approx((1 - a0) + 2 * (h0 / m) ** 2, rel=1e-14)
    # stronger forcing can only raise the offset
    _, K1 = drift_constants(params, 0.5, 0.04)
    assert K1 > K
    with pytest.raises(DomainError):
        drift_constants(params, 0.1, 0.0)
    with pytest.raises(DomainError):
        drift_constants(params, -0.1, 0.04)


def test_export_csv_deterministic(params, casimir_section, tmp_path):
    spec = _spec(0.08)
    path1 = simulate_pdmp(params, casimir_section, Y0, NoiseStream(spec),
                          10.0)
    path2 = simulate_pdmp(params, casimir_section, Y0, NoiseStream(spec),
                          10.0)
    buf1, buf2 = io.StringIO(), io.StringIO()
    export_path_csv(path1, buf1)
    export_path_csv(path2, buf2)
    assert buf1.getvalue() == buf2.getvalue()

    target = tmp_path / "path.csv"
    export_path_csv(path1, str(target))
    assert target.read_text() == buf1.getvalue()

    lines = buf1.getvalue().splitlines()
    assert lines[0] == "segment_index,eta,t_start,duration,u,v"
    assert len(lines) == len(path1.segments) + 1
    # only the cut tail lacks chart coordinates
    assert lines[-1].endswith(",,")
    for row in lines[1:-1]:
        assert not row.endswith(",,")


def test_path_summary_contents(params, casimir_section):
    path = simulate_pdmp(params, casimir_section, Y0,
                         NoiseStream(_spec(0.08)), 10.0)
    s = path_summary(path, quadrature_dt=0.01)
    assert s["horizon"] == pytest.approx(10.0)
    assert s["n_crossings"] == path.n_crossings
    assert s["mean_return"] == pytest.approx(path.mean_return)
    assert s["noise_used"] == path.noise_used
    assert set(s["observables"]) == {"y1", "y2", "y3", "casimir"}
    y3 = s["observables"]["y3"]
    assert y3["value"] == pytest.approx(
        time_average(path, lambda y: float(y[2]), 0.01), rel=1e-12)
    assert np.isfinite(y3["standard_error"])

    import json

    json.dumps(s)


def test_builtin_observables():
    assert set(BUILTIN_OBSERVABLES) == {"y1", "y2", "y3", "casimir"}
    y = np.array([1.0, -2.0, 3.0])
    assert BUILTIN_OBSERVABLES["y1"](y) == 1.0
    assert BUILTIN_OBSERVABLES["y2"](y) == -2.0
    assert BUILTIN_OBSERVABLES["y3"](y) == 3.0
    assert BUILTIN_OBSERVABLES["casimir"](y) == 14.0
