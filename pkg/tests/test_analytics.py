import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covertctl import analytics as an
from covertctl.errors import DomainError, NumericError

stable = st.floats(-0.95, 0.95)

# values from an independent quadrature + root-finding oracle (scipy.integrate.quad, brentq)
Q_INV_005 = 1.6448536269514726
Q_INV_0375 = 0.3186393639643754
Q_INV_0475 = 0.06270677794321386
Q_INV_1E6 = 4.753424308822899


class TestQFunction:
    def test_center(self):
        assert an.q_function(0.0) == 0.5

    @pytest.mark.parametrize("x", [0.5, 1.0, 2.0])
    def test_symmetry(self, x):
        assert an.q_function(x) + an.q_function(-x) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("p,x", [(0.05, Q_INV_005), (0.375, Q_INV_0375), (0.475, Q_INV_0475), (1e-6, Q_INV_1E6)])
    def test_inverse_against_quadrature(self, p, x):
        assert an.q_inverse(p) == pytest.approx(x, abs=1e-10)

    @given(st.floats(1e-12, 1 - 1e-12))
    def test_round_trip(self, p):
        assert an.q_function(an.q_inverse(p)) == pytest.approx(p, abs=1e-10)

    @given(st.floats(1e-9, 0.5), st.floats(1e-9, 0.5))
    def test_monotone(self, p, q):
        if p < q:
            assert an.q_inverse(p) >= an.q_inverse(q)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, math.nan])
    def test_domain(self, p):
        with pytest.raises(DomainError):
            an.q_inverse(p)

    def test_array_input(self):
        out = an.q_function(np.array([0.0, 100.0]))
        np.testing.assert_allclose(out, [0.5, 0.0])


def dense_steady(a, sigma, n):
    m = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            m[i, j] = sigma**2 * a ** abs(i - j) / (1 - a * a)
    return m


class TestCovariances:
    def test_transient_examples(self):
        np.testing.assert_allclose(an.transient_covariance(0.7, 2.0, 1).entries, [[4.0]])
        np.testing.assert_array_equal(an.transient_covariance(0.0, 1.5, 4).entries, 2.25 * np.eye(4))
        with pytest.raises(DomainError):
            an.transient_covariance(1.0, 1.0, 3)
        with pytest.raises(DomainError):
            an.transient_covariance(-1.0, 1.0, 3)

    def test_transient_matches_recursion(self):
        # propagate Var/Cov through the recursion exactly with the state-space form
        a, n = 0.8, 8
        L = np.tril(a ** np.subtract.outer(np.arange(n), np.arange(n)).clip(0))
        L[np.triu_indices(n, 1)] = 0
        np.testing.assert_allclose(an.transient_covariance(a, 1.0, n).entries, L @ L.T, rtol=1e-12)

    def test_transient_unstable_is_psd(self):
        m = an.transient_covariance(1.3, 1.0, 6)
        assert np.linalg.eigvalsh(m.entries).min() > -1e-9

    def test_steady_examples(self):
        np.testing.assert_array_equal(an.steady_covariance(0.0, 1.0, 3).entries, np.eye(3))
        assert an.steady_covariance(0.6, 1.0, 4).entries[2, 2] == pytest.approx(1.5625, rel=1e-15)
        with pytest.raises(DomainError):
            an.steady_covariance(1.0, 1.0, 3)

    def test_transient_approaches_steady(self):
        a = 0.9
        t = an.transient_covariance(a, 1.0, 50).entries[49, 49]
        s = 1 / (1 - a * a)
        assert 0 <= s - t <= a ** (2 * 50) * s * (1 + 1e-9)

    @pytest.mark.parametrize("a,n", [(0.7, 10), (-0.5, 4), (0.95, 25), (0.3, 2)])
    def test_precision_is_inverse(self, a, n):
        prod = an.steady_precision(a, 1.3, n).entries @ an.steady_covariance(a, 1.3, n).entries
        assert np.max(np.abs(prod - np.eye(n))) <= 1e-10

    def test_precision_small_cases(self):
        np.testing.assert_allclose(an.steady_precision(0.5, 2.0, 1).entries, [[0.75 / 4]])
        np.testing.assert_allclose(an.steady_precision(0.0, 2.0, 3).entries, np.eye(3) / 4)
        m = an.steady_precision(0.5, 1.0, 6).entries
        assert np.all(np.triu(m, 2) == 0)

    def test_reset_block(self):
        m = an.reset_covariance(0.8, 1.0, 6, 3)
        assert m.provenance is an.Provenance.RESET_BLOCK and m.tau == 3
        assert np.all(m.entries[:3, 3:] == 0) and np.all(m.entries[3:, :3] == 0)
        np.testing.assert_allclose(m.entries[3:, 3:], dense_steady(0.8, 1.0, 3), rtol=1e-14)
        last = an.reset_covariance(0.5, 1.0, 5, 4).entries
        assert last[4, 4] == pytest.approx(1 / 0.75)
        for tau in (0, 5, 7):
            with pytest.raises(DomainError):
                an.reset_covariance(0.5, 1.0, 5, tau)

    def test_reset_exact_tail_is_transient(self):
        m = an.reset_covariance_exact(0.8, 1.0, 6, 2).entries
        np.testing.assert_allclose(m[2:, 2:], an.transient_covariance(0.8, 1.0, 4).entries)
        assert m[2, 2] == pytest.approx(1.0)

    def test_covmatrix_validation(self):
        with pytest.raises(DomainError):
            an.CovMatrix([[1.0, 0.5], [0.4, 1.0]])
        with pytest.raises(DomainError):
            an.CovMatrix([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(DomainError):
            an.CovMatrix(np.ones((2, 3)))
        with pytest.raises(DomainError):
            an.CovMatrix([[1.0, 0.1], [0.1, 1.0]], an.Provenance.RESET_BLOCK, tau=1)
        m = an.steady_covariance(0.5, 1.0, 3)
        with pytest.raises((ValueError, TypeError)):
            m.entries[0, 0] = 5.0

    @settings(max_examples=50, deadline=None)
    @given(stable, st.floats(0.1, 3.0), st.integers(1, 30))
    def test_builders_symmetric_psd(self, a, sigma, n):
        for m in (an.steady_covariance(a, sigma, n), an.transient_covariance(a, sigma, n)):
            e = m.entries
            assert np.max(np.abs(e - e.T)) <= 1e-12 * np.max(np.abs(e))
            eig = np.linalg.eigvalsh(e)
            assert eig[0] >= -1e-9 * np.max(np.abs(eig))


GRID_AB = [0.1, 0.3, 0.5, 0.7, 0.9]
GRID_AB = GRID_AB + [-g for g in GRID_AB]
GRID_N = [1, 2, 3, 5, 10, 20, 40]


class TestClosedForms:
    def test_trace_examples(self):
        assert an.trace_ratio_closed_form(0.4, 0.4, 7) == pytest.approx(7.0, rel=1e-14)
        assert an.trace_ratio_closed_form(0.3, 0.5, 1) == pytest.approx(0.75 / 0.91, rel=1e-14)
        assert an.trace_ratio_closed_form(0.3, 0.5, 4) == pytest.approx(3.6 / 0.91, rel=1e-14)

    def test_det_examples(self):
        assert an.steady_det_closed_form(0.5, 2.0, 1) == pytest.approx(4 / 0.75)
        assert an.steady_det_closed_form(0.0, 2.0, 3) == pytest.approx(64.0)

    @pytest.mark.parametrize("n", GRID_N)
    def test_trace_and_det_grid(self, n):
        for a, b in itertools.product(GRID_AB, GRID_AB):
            Sa, Sb = dense_steady(a, 1.0, n), dense_steady(b, 1.0, n)
            dense = np.trace(np.linalg.solve(Sb, Sa))
            assert an.trace_ratio_closed_form(a, b, n) == pytest.approx(dense, rel=1e-9)
        for a in GRID_AB:
            sign, logdet = np.linalg.slogdet(dense_steady(a, 1.3, n))
            assert sign > 0
            assert math.log(an.steady_det_closed_form(a, 1.3, n)) == pytest.approx(logdet, abs=1e-9)

    def test_det_n8(self):
        assert an.steady_det_closed_form(0.7, 1.0, 8) == pytest.approx(np.linalg.det(dense_steady(0.7, 1.0, 8)), rel=1e-9)


class TestKL:
    def test_identical_is_exactly_zero(self):
        S = an.steady_covariance(0.5, 1.0, 5)
        assert an.kl_gaussian(None, S, None, S) == 0.0
        assert an.kl_gaussian([1, 2, 3, 4, 5], S, [1, 2, 3, 4, 5], S) == 0.0

    def test_scalar_mean_shift(self):
        assert an.kl_gaussian([1.5], [[4.0]], [0.0], [[4.0]]) == pytest.approx(1.5**2 / 8)

    def test_matches_dense_formula(self):
        rng = np.random.default_rng(1)
        A, B = rng.normal(size=(2, 5, 5))
        S0, S1 = A @ A.T + np.eye(5), B @ B.T + np.eye(5)
        mu0, mu1 = rng.normal(size=(2, 5))
        inv = np.linalg.inv(S1)
        d = mu1 - mu0
        dense = 0.5 * (np.trace(inv @ S0) + d @ inv @ d - 5 + math.log(np.linalg.det(S1) / np.linalg.det(S0)))
        assert an.kl_gaussian(mu0, S0, mu1, S1) == pytest.approx(dense, rel=1e-10)

    def test_singular(self):
        with pytest.raises(NumericError, match="condition"):
            an.kl_gaussian(None, np.eye(2), None, np.array([[1.0, 1.0], [1.0, 1.0]]))

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            an.kl_gaussian(None, np.eye(2), None, np.eye(3))

    def test_gain_change_examples(self):
        assert an.kl_gain_change(0.4, 0.4, 9) == 0.0
        assert an.kl_gain_change(0.0, 0.0, 9) == 0.0
        numeric = an.kl_gaussian(None, an.steady_covariance(0.3, 1.0, 4), None, an.steady_covariance(0.5, 1.0, 4))
        assert an.kl_gain_change(0.3, 0.5, 4) == pytest.approx(numeric, abs=1e-9)

    def test_reset_examples(self):
        assert an.kl_reset(0.0) == 0.0
        assert an.kl_reset(0.6) == pytest.approx(0.5 * math.log(1 / 0.64), rel=1e-15)
        with pytest.raises(DomainError):
            an.kl_reset(1.0)

    @pytest.mark.parametrize("tau", [1, 2, 3, 4, 5])
    def test_reset_tau_independent(self, tau):
        a = 0.7
        S0 = an.steady_covariance(a, 1.0, 6)
        S1 = an.reset_covariance(a, 1.0, 6, tau)
        assert an.kl_gaussian(None, S0, None, S1) == pytest.approx(an.kl_reset(a), abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(stable, stable, st.integers(1, 25))
    def test_kl_nonnegative(self, a, b, n):
        kl = an.kl_gaussian(None, an.steady_covariance(a, 1.0, n), None, an.steady_covariance(b, 1.0, n))
        assert kl >= -1e-10

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.05, 0.9), st.floats(0.05, 1.0), st.floats(0.01, 0.99), st.sampled_from([1, -1]))
    def test_covert_gain_change_keeps_floor(self, a, eps, frac, sign):
        limit = an.covert_gain_bound_gain_change(a, eps)
        b = a + frac * (limit - a)
        if not abs(a) < abs(b) < limit:
            return
        n_max = math.ceil(an.gain_change_window_limit(a, b)) - 1
        for n in range(1, max(n_max, 0) + 1):
            kl = an.kl_gain_change(sign * a, sign * b, n)
            assert 1 - math.sqrt(max(kl, 0.0) / 2) >= 1 - eps - 1e-12


class TestBoundReport:
    @pytest.mark.parametrize("kl,tv,low", [(0.0, 0.0, 1.0), (2.0, 1.0, 0.0), (0.08, 0.2, 0.8), (50.0, 1.0, 0.0)])
    def test_examples(self, kl, tv, low):
        r = an.bound_report(kl)
        assert r.tv_upper == pytest.approx(tv) and r.error_sum_lower == pytest.approx(low)

    def test_negative(self):
        with pytest.raises(DomainError):
            an.bound_report(-0.1)

    @given(st.floats(0, 1e6))
    def test_in_unit_interval(self, kl):
        r = an.bound_report(kl)
        assert 0 <= r.tv_upper <= 1 and 0 <= r.error_sum_lower <= 1
        assert r.error_sum_lower == 1 - r.tv_upper


class TestThresholds:
    def test_gain_change_bound(self):
        assert an.covert_gain_bound_gain_change(0.3, 0.2) == pytest.approx(math.sqrt(1 - 0.91 * math.exp(-0.16)), rel=1e-15)
        assert an.covert_gain_bound_gain_change(0.3, 0.2) == pytest.approx(0.4739, abs=1e-4)
        assert an.covert_gain_bound_gain_change(0.3, 30.0) == pytest.approx(1.0)
        assert an.covert_gain_bound_gain_change(0.0, 3.0) < 1.0

    def test_reset_bound(self):
        assert an.covert_gain_bound_reset(0.5, an.LogBase.TWO) == pytest.approx(math.sqrt(0.5), rel=1e-15)
        assert an.covert_gain_bound_reset(0.5, "two") == pytest.approx(0.70711, abs=5e-6)
        assert an.covert_gain_bound_reset(0.5) == pytest.approx(math.sqrt(1 - math.exp(-1)), rel=1e-15)
        assert an.covert_gain_bound_reset(0.5) == pytest.approx(0.79506, abs=5e-6)
        for base in an.LogBase:
            assert an.covert_gain_bound_reset(1e-9, base) < 1e-8

    def test_detection_gain_threshold(self):
        expected = math.sqrt(1 - Q_INV_0375**2 / (2 * math.log(4)))
        assert an.detection_gain_threshold(0.5) == pytest.approx(expected, rel=1e-12)
        assert an.detection_gain_threshold(0.5) == pytest.approx(0.9816, abs=2e-4)
        grid = [an.detection_gain_threshold(d) for d in np.arange(0.1, 0.95, 0.1)]
        assert all(0 <= g < 1 for g in grid)
        assert all(x > y for x, y in zip(grid, grid[1:]))
        with pytest.raises(DomainError):
            an.detection_gain_threshold(1.0)

    def test_k0_control(self):
        assert an.k0_control_energy(1.0, 0.1) == pytest.approx(40 * (1 + math.sqrt(3)) ** 2, rel=1e-15)
        assert an.k0_control_energy(1.0, 0.1) == pytest.approx(298.56, abs=0.01)
        assert an.k0_control_energy(2.0, 0.05) == pytest.approx(2 * an.k0_control_energy(2.0, 0.1))
        snr = 1e3
        assert an.k0_control_energy(snr, 0.1) / (8 / (0.1 * snr)) == pytest.approx(1.0, rel=0.05)

    def test_k0_residual(self):
        k0 = an.k0_residual_energy(1.0, 1 / 3, 1 / 5, 0.1)
        assert k0 == pytest.approx(400 / 9, rel=1e-12)
        assert k0 == pytest.approx(44.44, abs=0.01)
        # no fourth-moment excess leaves only the first radical
        assert an.k0_residual_energy(2.0, 0.5, 0.25, 0.2) == pytest.approx((4 * 2.0 * 0.5 / 0.1) / 4.0, rel=1e-12)
        with pytest.raises(DomainError):
            an.k0_residual_energy(1.0, 1.0, 0.5, 0.1)

    def test_k0_residual_below_compact(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            E_U, s2, d = rng.uniform(0.01, 5), rng.uniform(0.01, 5), rng.uniform(0.01, 0.99)
            m4 = s2 * s2 * rng.uniform(1, 5)
            assert an.k0_residual_energy(E_U, s2, m4, d) <= an.k0_residual_energy_compact(E_U, s2, m4, d) * (1 + 1e-12)

    def test_n0(self):
        assert an.n0_magnitude(2.0, 1.0, 10.0, 0.1) == pytest.approx(
            math.log(10 * math.sqrt(3) / Q_INV_0475) / math.log(2), rel=1e-10
        )
        assert an.n0_magnitude(2.0, 1.0, 10.0, 0.1) == pytest.approx(8.11, abs=0.005)
        assert an.n0_magnitude(2.0, 1.0, 20.0, 0.1) > an.n0_magnitude(2.0, 1.0, 10.0, 0.1)
        for a in (1.5, 2.0, 3.0):
            assert an.n0_magnitude(2 * a, 1.0, 10.0, 0.1) < an.n0_magnitude(a, 1.0, 10.0, 0.1)
        with pytest.raises(DomainError):
            an.n0_magnitude(1.0, 1.0, 10.0, 0.1)

    def test_magnitude_helpers(self):
        assert an.magnitude_threshold(1.0, 2.0, 0.5) == pytest.approx(2.0)
        assert an.gaussian_abs_moment(4.0, 2.0) == pytest.approx(4.0)
        assert an.gaussian_abs_moment(1.0, 1.0) == pytest.approx(math.sqrt(2 / math.pi))

    def test_reset_lrt_formulas(self):
        t = an.reset_lrt_threshold(0.99, 1.0, 0.5)
        assert an.reset_lrt_false_alarm(0.99, 1.0, t) == pytest.approx(0.25, abs=1e-12)
        assert t == pytest.approx(Q_INV_0375**2 / (1 - 0.99**2), rel=1e-10)
