import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from impulse_lorenz import DomainError
from impulse_lorenz.noise_driver import (
    NoiseFamily,
    NoiseSpec,
    NoiseStream,
    draw_block,
    law_cdf,
    omega_metric,
    sample_head,
    shift,
)

UNIF = NoiseSpec(NoiseFamily.UNIFORM_SYMMETRIC, 0.1, seed=7)
GAUSS = NoiseSpec(NoiseFamily.TRUNCATED_GAUSSIAN, 0.1, seed=7)


def test_spec_validation():
    with pytest.raises(DomainError):
        NoiseSpec(epsilon=-0.1)
    with pytest.raises(DomainError):
        NoiseSpec(epsilon=1.5)
    with pytest.raises(DomainError):
        NoiseSpec(seed=-1)
    with pytest.raises(DomainError):
        NoiseSpec(seed=2 ** 64)


def test_zero_amplitude_is_the_atomic_mass():
    for fam in NoiseFamily:
        spec = NoiseSpec(fam, 0.0, seed=123)
        assert spec.effective_family is NoiseFamily.ATOMIC_ZERO
        assert sample_head(NoiseStream(spec)) == 0.0
        assert np.all(draw_block(spec, 0, 1000) == 0.0)


def test_support_contract():
    for spec in (UNIF, GAUSS):
        xs = draw_block(spec, 0, 10 ** 5)
        assert np.all(np.abs(xs) <= spec.epsilon)


def test_uniform_mean_within_clt_band():
    n = 10 ** 5
    xs = draw_block(UNIF, 0, n)
    assert abs(xs.mean()) <= 3.0 * UNIF.epsilon / np.sqrt(3.0 * n)


def test_uniform_law_by_kolmogorov_smirnov():
    n = 10 ** 5
    xs = draw_block(UNIF, 0, n)
    d = stats.kstest(xs, lambda x: law_cdf(UNIF, x)).statistic
    assert d < 1.36 / np.sqrt(n)


def test_truncated_gaussian_law_by_kolmogorov_smirnov():
    n = 10 ** 5
    xs = draw_block(GAUSS, 0, n)
    d = stats.kstest(xs, lambda x: law_cdf(GAUSS, x)).statistic
    assert d < 1.36 / np.sqrt(n)
    # two-sigma truncation: extremes approach but never exceed eps
    assert np.max(np.abs(xs)) > 0.9 * GAUSS.epsilon


def test_weak_convergence_to_the_atomic_mass():
    # bounded-Lipschitz witness: E f(eta) -> f(0) at rate eps for f = cos
    gaps = []
    for eps in (0.5, 0.1, 0.02):
        spec = NoiseSpec(NoiseFamily.UNIFORM_SYMMETRIC, eps, seed=11)
        xs = draw_block(spec, 0, 10 ** 4)
        gaps.append(abs(np.mean(np.cos(xs)) - 1.0))
        assert gaps[-1] <= eps ** 2 / 2.0 + 1e-12
    assert gaps[0] > gaps[1] > gaps[2]


def test_head_does_not_advance():
    s = NoiseStream(UNIF)
    assert s.head() == s.head()
    assert s.cursor == 0


def test_shift_reads_successive_coordinates():
    block = draw_block(UNIF, 0, 64)
    s = NoiseStream(UNIF)
    for k in range(64):
        assert s.head() == block[k]
        s = shift(s)


def test_replay_from_cursor_is_bit_identical():
    s = NoiseStream(UNIF).shift(10 ** 6)
    assert s.head() == draw_block(UNIF, 10 ** 6, 1)[0]
    np.testing.assert_array_equal(s.take(100), draw_block(UNIF, 10 ** 6, 100))


def test_clones_evolve_identically():
    a = NoiseStream(GAUSS, cursor=5)
    b = a.clone()
    for _ in range(10):
        assert a.head() == b.head()
        a, b = a.shift(), b.shift()


def test_interleaved_clone_and_shift():
    base = NoiseStream(UNIF)
    one = base.shift(3).clone().shift(2)
    other = base.clone().shift(5)
    assert one == other
    assert one.head() == other.head()


def test_streams_differ_across_seeds():
    a = draw_block(NoiseSpec(NoiseFamily.UNIFORM_SYMMETRIC, 0.1, seed=1), 0, 32)
    b = draw_block(NoiseSpec(NoiseFamily.UNIFORM_SYMMETRIC, 0.1, seed=2), 0, 32)
    assert not np.any(a == b)


class TestOmegaMetric:
    def test_identical_streams_at_zero(self):
        s = NoiseStream(UNIF)
        assert omega_metric(s, s.clone(), 32) == 0.0

    def test_constant_opposite_sequences(self):
        ones = np.ones(64)
        val = omega_metric(ones, -ones, 40)
        # sum over n of 2^-n * (2/3), truncated: (2/3)(1 - 2^-40)
        assert val == pytest.approx(2.0 / 3.0, abs=1e-11)

    def test_bounded_by_one(self):
        big = np.full(16, 1e12)
        assert omega_metric(big, -big, 16) <= 1.0

    def test_truncation_error_bound(self):
        a = NoiseStream(UNIF)
        b = NoiseStream(NoiseSpec(NoiseFamily.UNIFORM_SYMMETRIC, 0.1, seed=99))
        full = omega_metric(a, b, 50)
        for n in (1, 2, 5, 10):
            assert abs(omega_metric(a, b, n) - full) <= 2.0 ** -n

    def test_rejects_bad_term_count(self):
        with pytest.raises(DomainError):
            omega_metric(np.ones(4), np.ones(4), 0)

    @given(st.integers(0, 2 ** 32), st.integers(0, 2 ** 32))
    @settings(max_examples=25, deadline=None)
    def test_symmetry_and_range(self, s1, s2):
        a = NoiseStream(NoiseSpec(NoiseFamily.UNIFORM_SYMMETRIC, 1.0, seed=s1))
        b = NoiseStream(NoiseSpec(NoiseFamily.UNIFORM_SYMMETRIC, 1.0, seed=s2))
        v1 = omega_metric(a, b, 20)
        v2 = omega_metric(b, a, 20)
        assert v1 == v2
        assert 0.0 <= v1 <= 1.0
