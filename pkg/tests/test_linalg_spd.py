import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logdetmlp import linalg_spd as la
from logdetmlp.errors import DimensionMismatch, NotPositiveDefinite


def cofactor_det(m):
    m = [list(r) for r in m]
    if len(m) == 1:
        return m[0][0]
    return sum((-1) ** j * m[0][j] * cofactor_det([row[:j] + row[j + 1:] for row in m[1:]])
               for j in range(len(m)))


def random_spd(seed, dim, eps=0.1):
    m = np.random.default_rng(seed).standard_normal((dim, dim))
    return m.T @ m + eps * np.eye(dim)


spd_cases = st.tuples(st.integers(0, 10_000), st.integers(1, 14))


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(la.cholesky(np.eye(2)), np.eye(2))

    def test_correlated_2x2_covariance(self):
        r5 = math.sqrt(5.0)
        expected = [[r5, 0.0], [4 / r5, 3 / r5]]
        np.testing.assert_allclose(la.cholesky([[5, 4], [4, 5]]), expected, rtol=1e-15)

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            la.cholesky([[1, 2], [2, 1]])

    def test_singular_raises(self):
        with pytest.raises(NotPositiveDefinite):
            la.cholesky(np.zeros((2, 2)))

    def test_non_square(self):
        with pytest.raises(DimensionMismatch):
            la.cholesky(np.ones((2, 3)))

    @pytest.mark.parametrize("dim", [3, 12, 13, 30])
    def test_both_code_paths_reconstruct(self, dim):
        a = random_spd(dim, dim)
        low = la.cholesky(a)
        assert np.all(np.triu(low, 1) == 0)
        assert np.all(np.diag(low) > 0)
        assert np.linalg.norm(low @ low.T - a) <= 1e-12 * np.linalg.norm(a)

    @settings(max_examples=60, deadline=None)
    @given(spd_cases)
    def test_round_trip(self, case):
        a = random_spd(*case)
        low = la.cholesky(a)
        assert np.linalg.norm(low @ low.T - a) <= 1e-12 * np.linalg.norm(a)


class TestLogdet:
    def test_identity(self):
        assert la.logdet(np.eye(4)) == 0.0

    def test_correlated_2x2_covariance(self):
        assert la.logdet([[5, 4], [4, 5]]) == pytest.approx(math.log(9.0), rel=1e-14)

    def test_diagonal(self):
        assert la.logdet(np.diag([math.e, math.e ** 2])) == pytest.approx(3.0, rel=1e-14)

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("dim", [1, 2, 3, 4])
    def test_matches_cofactor_expansion(self, seed, dim):
        a = random_spd(seed, dim)
        assert la.logdet(a) == pytest.approx(math.log(cofactor_det(a.tolist())), rel=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(spd_cases)
    def test_matches_eigenvalues(self, case):
        a = random_spd(*case)
        assert la.logdet(a) == pytest.approx(float(np.sum(np.log(la.sym_eigenvalues(a)))), rel=1e-8, abs=1e-9)

    def test_logdet_and_inverse_agree(self):
        for dim in (2, 5, 20):
            a = random_spd(3, dim)
            value, inv = la.logdet_and_inverse(a)
            assert value == pytest.approx(la.logdet(a), rel=1e-13)
            np.testing.assert_allclose(inv, la.spd_inverse(a), atol=1e-10)


class TestInverse:
    def test_identity(self):
        np.testing.assert_array_equal(la.spd_inverse(np.eye(3)), np.eye(3))

    def test_correlated_2x2_covariance(self):
        expected = np.array([[5, -4], [-4, 5]]) / 9
        np.testing.assert_allclose(la.spd_inverse([[5, 4], [4, 5]]), expected, atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(la.spd_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))

    @settings(max_examples=60, deadline=None)
    @given(spd_cases)
    def test_properties(self, case):
        a = random_spd(*case, eps=1.0)
        inv = la.spd_inverse(a)
        assert np.array_equal(inv, inv.T)
        assert np.max(np.abs(a @ inv - np.eye(len(a)))) < 1e-10
        assert np.max(np.abs(la.spd_inverse(inv) - a)) < 1e-8

    def test_tril_inverse(self):
        low = la.cholesky(random_spd(4, 6))
        np.testing.assert_allclose(la.tril_inverse(low) @ low, np.eye(6), atol=1e-12)


class TestTraceProd:
    def test_identity_factor(self):
        b = np.arange(9.0).reshape(3, 3)
        assert la.trace_prod(np.eye(3), b) == np.trace(b)

    def test_two_by_two(self):
        assert la.trace_prod([[1, 2], [3, 4]], [[0, 1], [1, 0]]) == 5.0

    @pytest.mark.parametrize("seed", range(5))
    def test_cyclic(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, 3, 3))
        assert la.trace_prod(a, b) == pytest.approx(la.trace_prod(b, a), rel=1e-12)
        assert la.trace_prod(a, b) == pytest.approx(np.trace(a @ b), rel=1e-12)

    def test_rectangular_conformable(self):
        a = np.ones((2, 3))
        b = np.ones((3, 2))
        assert la.trace_prod(a, b) == 6.0

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            la.trace_prod(np.ones((2, 2)), np.ones((3, 3)))


class TestEigenvalues:
    def test_correlated_2x2_covariance(self):
        np.testing.assert_allclose(la.sym_eigenvalues([[5, 4], [4, 5]]), [9, 1], rtol=1e-14)

    def test_identity(self):
        np.testing.assert_array_equal(la.sym_eigenvalues(np.eye(3)), [1, 1, 1])

    def test_diagonal_sorted_descending(self):
        np.testing.assert_array_equal(la.sym_eigenvalues(np.diag([1.0, 3.0, 2.0])), [3, 2, 1])

    @pytest.mark.parametrize("dim", [2, 5, 17, 40])
    def test_vs_lapack(self, dim):
        m = np.random.default_rng(dim).standard_normal((dim, dim))
        a = m + m.T
        ours = la.sym_eigenvalues(a)
        assert np.all(np.diff(ours) <= 0)
        np.testing.assert_allclose(ours, np.linalg.eigvalsh(a)[::-1], atol=1e-9 * np.abs(ours).max())
        assert np.sum(ours) == pytest.approx(np.trace(a), rel=1e-9, abs=1e-9)

    def test_budget_exhausted(self, monkeypatch):
        monkeypatch.setattr(la, "JACOBI_MAX_SWEEPS", 0)
        m = np.random.default_rng(0).standard_normal((5, 5))
        with pytest.raises(la.NoConvergence):
            la.sym_eigenvalues(m + m.T)
