"""Asymptotic inference for log-det fits.

Information matrix, asymptotic weight covariance and Wald statistics, the
nested-model chi-square test ``T_n = n * (U_q - U_s)``, chi-square
distribution functions, and Monte-Carlo tabulation of weighted chi-square
sums (the reference law of the MSE-based statistic).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg_spd
from .cost import LOGDET, Dataset, empirical_cov, residuals
from .errors import KindMismatch, NestingViolation
from .model import MlpSpec, batch_jacobian
from .optim import FitReport

NESTING_TOL = 1e-6
Z95 = 1.959963984540054

_CF_TINY = 1e-300
_EPS = 1e-16
_MAX_TERMS = 10_000


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_k x^k / ((a+1)...(a+k))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a: float, x: float) -> float:
    # Q(a, x) by the modified Lentz continued fraction
    b = x + 1.0 - a
    c = 1.0 / _CF_TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = b + an / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def chi2_cdf(x: float, k: int) -> float:
    """Chi-square CDF: the regularized lower incomplete gamma P(k/2, x/2)."""
    if k < 1:
        raise ValueError("degrees of freedom must be a positive integer")
    a, half = 0.5 * k, 0.5 * x
    if half <= 0:
        return 0.0
    if x < k + 2:
        return min(1.0, _gamma_series(a, half))
    return max(0.0, 1.0 - _gamma_cont_frac(a, half))


def chi2_sf(x: float, k: int) -> float:
    """Upper tail ``1 - chi2_cdf(x, k)``, accurate for small tails."""
    if k < 1:
        raise ValueError("degrees of freedom must be a positive integer")
    a, half = 0.5 * k, 0.5 * x
    if half <= 0:
        return 1.0
    if x < k + 2:
        return max(0.0, 1.0 - _gamma_series(a, half))
    return min(1.0, _gamma_cont_frac(a, half))


def information_matrix(spec: MlpSpec, weights, data: Dataset, gamma,
                       free_mask=None) -> np.ndarray:
    """``(1/n) sum_t J_t' gamma^{-1} J_t``, restricted to the free weights."""
    ginv = linalg_spd.spd_inverse(gamma)
    jac = batch_jacobian(spec, weights, data.inputs)
    if free_mask is not None:
        jac = jac[:, :, np.asarray(free_mask, dtype=bool)]
    info = np.einsum("tik,ij,tjl->kl", jac, ginv, jac) / data.n
    return linalg_spd.symmetrize(info)


@dataclass
class WeightInference:
    """Plug-in asymptotic normal approximation for the fitted weights.

    All per-weight arrays are indexed like ``free_indices``.
    """

    free_indices: np.ndarray
    weights: np.ndarray
    info: np.ndarray
    asym_cov: np.ndarray
    std_errors: np.ndarray
    wald: np.ndarray

    @property
    def wald_pvalues(self) -> np.ndarray:
        return np.array([chi2_sf(float(v), 1) for v in self.wald])

    def intervals(self, z: float = Z95) -> np.ndarray:
        """Marginal intervals ``w +- z * se``, shape (k, 2)."""
        return np.column_stack([self.weights - z * self.std_errors,
                                self.weights + z * self.std_errors])

    def pruning_order(self) -> np.ndarray:
        """Flat weight indices sorted from least to most significant."""
        return self.free_indices[np.argsort(self.wald, kind="stable")]

    def to_dict(self, spec: MlpSpec | None = None) -> dict:
        names = spec.weight_names() if spec is not None else None
        rows = []
        pvalues = self.wald_pvalues
        for j, idx in enumerate(self.free_indices):
            rows.append({
                "index": int(idx),
                "name": names[idx] if names else None,
                "weight": float(self.weights[j]),
                "std_error": float(self.std_errors[j]),
                "wald": float(self.wald[j]),
                "p_value": float(pvalues[j]),
            })
        return {"weights": rows, "pruning_order": [int(i) for i in self.pruning_order()]}


def weight_inference(spec: MlpSpec, weights, data: Dataset, free_mask=None,
                     gamma=None) -> WeightInference:
    """Standard errors and Wald statistics from the information matrix.

    ``gamma`` defaults to the empirical residual covariance at ``weights``.
    Frozen weights are left out entirely. A singular information matrix
    (redundant hidden units) raises ``NotPositiveDefinite``.
    """
    weights = np.asarray(weights, dtype=float)
    if gamma is None:
        gamma = empirical_cov(residuals(spec, weights, data))
    mask = (np.ones(spec.param_count, dtype=bool) if free_mask is None
            else np.asarray(free_mask, dtype=bool))
    info = information_matrix(spec, weights, data, gamma, mask)
    asym_cov = linalg_spd.spd_inverse(info) / data.n
    variances = np.clip(np.diag(asym_cov), 0.0, None)
    free_weights = weights[mask]
    with np.errstate(divide="ignore"):
        wald = free_weights ** 2 / variances
    return WeightInference(np.flatnonzero(mask), free_weights, info, asym_cov,
                           np.sqrt(variances), wald)


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    statistic: float
    df: int
    p_value: float
    restricted_value: float
    full_value: float
    n: int

    def to_dict(self) -> dict:
        return {"T_n": float(self.statistic), "df": int(self.df), "p_value": float(self.p_value),
                "U_q": float(self.restricted_value), "U_s": float(self.full_value), "n": int(self.n)}


def lr_test(restricted: FitReport, full: FitReport, n: int | None = None,
            df: int | None = None) -> TestReport:
    """``T_n = n (U_q - U_s)`` against chi-square with ``s - q`` degrees of freedom.

    ``df`` defaults to the difference in free-weight counts. A statistic
    below ``-NESTING_TOL`` means the full fit missed the restricted optimum
    and raises :class:`NestingViolation`. ``df == 0`` gives p = 1.
    """
    if restricted.cost_kind != LOGDET or full.cost_kind != LOGDET:
        raise KindMismatch("the chi-square test needs two log-det fits, got "
                           f"{restricted.cost_kind!r} and {full.cost_kind!r}")
    n = full.n if n is None else n
    df = full.n_free - restricted.n_free if df is None else df
    if df < 0:
        raise NestingViolation("restricted model has more free weights than the full one")
    stat = n * (restricted.value - full.value)
    if stat < -NESTING_TOL:
        raise NestingViolation(f"T_n = {stat:.3g} < 0: the full fit is worse than the restricted fit")
    p_value = 1.0 if df == 0 else chi2_sf(max(stat, 0.0), df)
    return TestReport(stat, df, p_value, restricted.value, full.value, n)


def weighted_chi2_sample(lambdas, draws: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted draws of ``sum_i lambda_i Z_i^2`` with standard normal ``Z_i``."""
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.ndim != 1 or lambdas.size == 0 or np.any(lambdas <= 0):
        raise ValueError("weights must be a non-empty list of positive numbers")
    normals = rng.standard_normal((draws, lambdas.size))
    return np.sort((normals ** 2) @ lambdas)


def weights_from_matrix(matrix, tol: float = 1e-12) -> np.ndarray:
    """Positive eigenvalues of a symmetric matrix, usable as chi-square weights."""
    eig = linalg_spd.sym_eigenvalues(matrix)
    return eig[eig > tol * max(1.0, float(abs(eig[0])))]


def mse_statistic(restricted: FitReport, full: FitReport, n: int | None = None) -> float:
    """Experimental: ``S_n = n (MSE_q - MSE_s)`` for two MSE fits."""
    if restricted.cost_kind != "mse" or full.cost_kind != "mse":
        raise KindMismatch("S_n compares two MSE fits")
    n = full.n if n is None else n
    return n * (restricted.value - full.value)


def reference_pvalue(statistic: float, lambdas, draws: int, rng: np.random.Generator) -> float:
    """Experimental: Monte-Carlo upper tail of the weighted chi-square law."""
    sample = weighted_chi2_sample(lambdas, draws, rng)
    return float(draws - np.searchsorted(sample, statistic, side="left")) / draws
