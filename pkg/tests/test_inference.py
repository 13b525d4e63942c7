import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from logdetmlp.cost import CostKind, Dataset, batch_jacobian, cost_value, empirical_cov, residuals
from logdetmlp.errors import KindMismatch, NestingViolation
from logdetmlp.inference import (chi2_cdf, chi2_sf, information_matrix, lr_test, mse_statistic,
                                 reference_pvalue, weight_inference, weighted_chi2_sample,
                                 weights_from_matrix)
from logdetmlp.model import MlpSpec, forward_batch, random_init
from logdetmlp.optim import FitReport, multistart_fit

from conftest import make_regression
from test_model import apply_symmetry


def chi2_density(t, k):
    return t ** (k / 2 - 1) * math.exp(-t / 2) / (2 ** (k / 2) * math.gamma(k / 2))


def fake_fit(value, n_free, kind="logdet", n=1000):
    spec = MlpSpec(1, 1, 1)
    mask = np.zeros(spec.param_count, dtype=bool)
    mask[:n_free] = True
    return FitReport(kind, spec, n, np.zeros(4), value, 0.0, 0, 1, [value], np.eye(1), "grad_tol",
                     free_mask=mask)


class TestChiSquare:
    @pytest.mark.parametrize("k", [1, 2, 3, 5, 10, 30])
    @pytest.mark.parametrize("x", [0.1, 1.0, 3.5, 8.0, 25.0, 60.0])
    def test_cdf_against_quadrature(self, k, x):
        expected, _ = integrate.quad(chi2_density, 0, x, args=(k,), epsabs=1e-13, epsrel=1e-12,
                                     limit=200)
        assert chi2_cdf(x, k) == pytest.approx(expected, rel=1e-9, abs=1e-12)

    def test_two_dof_closed_form(self):
        for x in (0.5, 2.0, 7.0, 40.0):
            assert chi2_cdf(x, 2) == pytest.approx(1 - math.exp(-x / 2), rel=1e-12)
            assert chi2_sf(x, 2) == pytest.approx(math.exp(-x / 2), rel=1e-12)

    def test_familiar_quantiles(self):
        assert chi2_cdf(3.841458820694124, 1) == pytest.approx(0.95, abs=1e-12)
        assert chi2_sf(5.991464547107979, 2) == pytest.approx(0.05, abs=1e-12)

    def test_small_tail_relative_accuracy(self):
        # tail far below machine epsilon relative to 1
        assert chi2_sf(200.0, 3) == pytest.approx(stats.chi2.sf(200.0, 3), rel=1e-10)

    def test_boundaries(self):
        assert chi2_cdf(0.0, 3) == 0.0
        assert chi2_sf(-1.0, 3) == 1.0
        with pytest.raises(ValueError):
            chi2_cdf(1.0, 0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 200.0), st.floats(0.0, 50.0), st.integers(1, 40))
    def test_monotone_and_complementary(self, x, dx, k):
        assert chi2_cdf(x, k) <= chi2_cdf(x + dx, k)
        assert chi2_cdf(x, k) >= chi2_cdf(x, k + 2) - 1e-15
        assert 0.0 <= chi2_cdf(x, k) <= 1.0
        assert chi2_cdf(x, k) + chi2_sf(x, k) == pytest.approx(1.0, abs=1e-12)


class TestLrTest:
    def test_worked_example(self):
        report = lr_test(fake_fit(2.30, 2), fake_fit(2.29, 4), n=1000)
        assert report.statistic == pytest.approx(10.0, rel=1e-9)
        assert report.df == 2
        assert report.p_value == pytest.approx(math.exp(-5.0), rel=1e-8)
        assert report.p_value == pytest.approx(0.00674, abs=5e-6)

    def test_identical_fits(self):
        report = lr_test(fake_fit(1.5, 3), fake_fit(1.5, 3))
        assert report.statistic == 0.0
        assert report.df == 0
        assert report.p_value == 1.0

    def test_nesting_violation(self):
        with pytest.raises(NestingViolation):
            lr_test(fake_fit(2.28, 2), fake_fit(2.29, 4))

    def test_tiny_negative_is_tolerated(self):
        report = lr_test(fake_fit(2.0, 2), fake_fit(2.0 + 1e-10, 4))
        assert report.p_value == 1.0

    def test_kind_mismatch(self):
        with pytest.raises(KindMismatch):
            lr_test(fake_fit(2.3, 2, kind="mse"), fake_fit(2.29, 4))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5.0, 5.0), st.floats(0.0, 0.1), st.integers(1, 5))
    def test_pvalue_range(self, u_s, drop, df):
        report = lr_test(fake_fit(u_s + drop, 2), fake_fit(u_s, 2 + df))
        assert 0.0 <= report.p_value <= 1.0
        assert report.statistic >= -1e-6

    def test_invariant_under_relabeling(self, noisy232):
        spec, data, point = noisy232
        mask = np.ones(spec.param_count, dtype=bool)
        mask[14] = False
        small = multistart_fit(spec, data, CostKind.logdet(), 1, seed=0, free_mask=mask)
        fit = multistart_fit(spec, data, CostKind.logdet(), 0, starts=[small.weights])
        moved = apply_symmetry(spec, fit.weights, [2, 0, 1], [-1.0, 1.0, -1.0])
        relabeled = dataclasses.replace(fit, weights=moved,
                                        value=cost_value(CostKind.logdet(), spec, moved, data))
        a, b = lr_test(small, fit), lr_test(small, relabeled)
        assert a.statistic == pytest.approx(b.statistic, rel=1e-9, abs=1e-9)
        assert a.df == b.df

    def test_report_keys(self):
        d = lr_test(fake_fit(2.30, 2), fake_fit(2.29, 4)).to_dict()
        assert set(d) == {"T_n", "df", "p_value", "U_q", "U_s", "n"}

    def test_mse_statistic(self):
        assert mse_statistic(fake_fit(1.2, 2, "mse"), fake_fit(1.1, 4, "mse"), n=100) == pytest.approx(10.0)
        with pytest.raises(KindMismatch):
            mse_statistic(fake_fit(1.2, 2), fake_fit(1.1, 4, "mse"))


class TestInformation:
    def test_matches_per_sample_sum(self, noisy232):
        spec, data, point = noisy232
        gamma = empirical_cov(residuals(spec, point, data))
        jac = batch_jacobian(spec, point, data.inputs)
        ginv = np.linalg.inv(gamma)
        expected = sum(jac[t].T @ ginv @ jac[t] for t in range(data.n)) / data.n
        info = information_matrix(spec, point, data, gamma)
        np.testing.assert_allclose(info, expected, rtol=1e-10, atol=1e-12)
        assert np.array_equal(info, info.T)

    def test_identity_reduces_to_gram(self, noisy232):
        spec, data, point = noisy232
        jac = batch_jacobian(spec, point, data.inputs)
        expected = np.einsum("tik,til->kl", jac, jac) / data.n
        np.testing.assert_allclose(information_matrix(spec, point, data, np.eye(2)), expected,
                                   rtol=1e-12)

    def test_scalar_identity_is_gauss_newton(self):
        spec = MlpSpec(2, 3, 1)
        data, truth = make_regression(spec, 30, 4, gamma=np.eye(1))
        jac = batch_jacobian(spec, truth, data.inputs)[:, 0, :]
        np.testing.assert_allclose(information_matrix(spec, truth, data, np.eye(1)),
                                   jac.T @ jac / data.n, rtol=1e-12)

    def test_single_sample_orthonormal_rows_give_projection(self):
        # with zero hidden weights the output-layer block of J is [1, tanh(0), ...] per row
        spec = MlpSpec(1, 1, 2)
        weights = np.zeros(spec.param_count)
        data = Dataset([[0.0]], [[0.0, 0.0]])
        info = information_matrix(spec, weights, data, np.eye(2))
        np.testing.assert_allclose(info @ info, info, atol=1e-15)
        assert np.trace(info) == pytest.approx(2.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_symmetric_psd(self, seed):
        rng = np.random.default_rng(seed)
        spec = MlpSpec(2, 2, 2)
        weights = random_init(spec, 1.0, rng)
        data = Dataset(rng.standard_normal((20, 2)), rng.standard_normal((20, 2)))
        m = rng.standard_normal((2, 2))
        info = information_matrix(spec, weights, data, m @ m.T + 0.1 * np.eye(2))
        assert np.array_equal(info, info.T)
        assert np.min(np.linalg.eigvalsh(info)) > -1e-10 * np.max(np.abs(info))

    def test_mask_selects_submatrix(self, noisy232):
        spec, data, point = noisy232
        mask = np.ones(spec.param_count, dtype=bool)
        mask[[3, 9]] = False
        full = information_matrix(spec, point, data, np.eye(2))
        np.testing.assert_allclose(information_matrix(spec, point, data, np.eye(2), mask),
                                   full[np.ix_(mask, mask)], rtol=1e-12)

    def test_weight_inference_shapes(self, noisy232):
        spec, data, point = noisy232
        mask = np.ones(spec.param_count, dtype=bool)
        mask[[0, 5]] = False
        inf = weight_inference(spec, point, data, mask)
        assert list(inf.free_indices) == [i for i in range(spec.param_count) if i not in (0, 5)]
        np.testing.assert_allclose(inf.wald, (inf.weights / inf.std_errors) ** 2)
        lo, hi = inf.intervals().T
        assert np.all(lo < inf.weights) and np.all(inf.weights < hi)
        order = inf.pruning_order()
        assert inf.wald[list(inf.free_indices).index(order[0])] == np.min(inf.wald)
        assert len(inf.to_dict(spec)["weights"]) == spec.param_count - 2

    def test_variance_scales_inversely_with_n(self):
        spec = MlpSpec(1, 2, 1)
        truth = spec.pack([[0.2, 1.0, -0.8]], [[0.1, 1.2], [-0.4, 0.5]])
        ratios = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            covs = []
            for n in (500, 1000):
                z = rng.standard_normal((n, 1))
                data = Dataset(z, forward_batch(spec, truth, z) + 0.5 * rng.standard_normal((n, 1)))
                covs.append(np.diag(weight_inference(spec, truth, data).asym_cov))
            ratios.append(np.median(covs[0] / covs[1]))
        assert 1.6 < np.median(ratios) < 2.4


class TestWeightedChiSquare:
    def test_unit_weights_are_chi_square(self):
        draws = weighted_chi2_sample([1.0, 1.0, 1.0], 100_000, np.random.default_rng(0))
        assert np.all(np.diff(draws) >= 0)
        ks = stats.kstest(draws, lambda x: np.array([chi2_cdf(v, 3) for v in np.atleast_1d(x)]))
        assert ks.statistic < 0.02

    def test_scaled_single_weight(self):
        draws = weighted_chi2_sample([2.0], 100_000, np.random.default_rng(1))
        for q in (0.25, 0.5, 0.9):
            assert np.quantile(draws, q) == pytest.approx(2 * stats.chi2.ppf(q, 1), rel=0.03)

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            weighted_chi2_sample([1.0, -1.0], 10, np.random.default_rng(0))

    def test_weights_from_matrix(self):
        np.testing.assert_allclose(weights_from_matrix([[5.0, 4.0], [4.0, 5.0]]), [9.0, 1.0])
        np.testing.assert_allclose(weights_from_matrix(np.diag([2.0, 0.0])), [2.0])

    def test_weights_from_asymptotic_covariance(self, noisy232):
        spec, data, point = noisy232
        cov = weight_inference(spec, point, data).asym_cov * data.n
        lambdas = weights_from_matrix(cov)
        assert lambdas.size == spec.param_count and np.all(lambdas > 0)
        draws = weighted_chi2_sample(lambdas, 50_000, np.random.default_rng(3))
        assert np.mean(draws) == pytest.approx(np.trace(cov), rel=0.05)

    def test_reference_pvalue(self):
        rng = np.random.default_rng(2)
        assert reference_pvalue(3.841458820694124, [1.0], 200_000, rng) == pytest.approx(0.05, abs=0.003)
