"""BFGS with a strong-Wolfe line search, multi-start fitting and iterated FGLS."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import cost as _cost
from .cost import CostKind, Dataset
from .errors import AllRestartsInfeasible, DegenerateCovariance, InfeasibleStart
from .model import MlpSpec, canonical_map, random_init
from .streams import generator, substream

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]

GRAD_TOL = "grad_tol"
MAX_ITERS = "max_iters"
LINE_SEARCH_FAILED = "line_search_failed"


@dataclass(frozen=True)
class OptimOptions:
    grad_tol: float = 1e-8
    max_iters: int = 500
    c1: float = 1e-4
    c2: float = 0.9
    max_halvings: int = 60
    max_expansions: int = 30

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("Wolfe constants must satisfy 0 < c1 < c2 < 1")
        if self.grad_tol <= 0 or self.max_iters < 0:
            raise ValueError("grad_tol must be positive and max_iters non-negative")


@dataclass
class BfgsResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    reason: str
    evaluations: int = 0


class _LineFunction:
    """phi(alpha) = f(x + alpha p) as a trial ``(value, slope, x, grad, alpha)``.

    Infeasible points come back with value +inf and no gradient.
    """

    def __init__(self, objective, x, p, mask):
        self.objective = objective
        self.x = x
        self.p = p
        self.mask = mask
        self.evaluations = 0

    def __call__(self, alpha):
        self.evaluations += 1
        x = self.x + alpha * self.p
        try:
            value, grad = self.objective(x)
        except DegenerateCovariance:
            return math.inf, math.nan, x, None, alpha
        if not np.isfinite(value):
            return math.inf, math.nan, x, None, alpha
        if self.mask is not None:
            grad = grad * self.mask
        return value, float(grad @ self.p), x, grad, alpha


def _strong_wolfe(phi: _LineFunction, f0: float, dphi0: float, opts: OptimOptions):
    """Bracketing then bisection zoom.

    Returns ``(trial or None, best)`` where ``best`` is the lowest trial that
    strictly decreased the objective, kept for the caller's fallbacks.
    """
    best = None

    def evaluate(alpha):
        nonlocal best
        trial = phi(alpha)
        if trial[3] is not None and trial[0] < f0 and (best is None or trial[0] < best[0]):
            best = trial
        return trial

    def sufficient(trial):
        return trial[0] <= f0 + opts.c1 * trial[4] * dphi0

    def curvature(trial):
        return abs(trial[1]) <= -opts.c2 * dphi0

    def zoom(lo, hi, lo_value):
        for _ in range(opts.max_halvings):
            trial = evaluate(0.5 * (lo + hi))
            if not sufficient(trial) or trial[0] >= lo_value:
                hi = trial[4]
            else:
                if curvature(trial):
                    return trial
                if trial[1] * (hi - lo) >= 0:
                    hi = lo
                lo, lo_value = trial[4], trial[0]
        return None

    alpha_prev, value_prev = 0.0, f0
    alpha = 1.0
    for i in range(opts.max_expansions):
        trial = evaluate(alpha)
        if not sufficient(trial) or (i > 0 and trial[0] >= value_prev):
            return zoom(alpha_prev, alpha, value_prev), best
        if curvature(trial):
            return trial, best
        if trial[1] >= 0:
            return zoom(alpha, alpha_prev, trial[0]), best
        alpha_prev, value_prev = alpha, trial[0]
        alpha *= 2.0
    return None, best


def _armijo(phi: _LineFunction, f0: float, dphi0: float, opts: OptimOptions):
    alpha = 1.0
    for _ in range(opts.max_halvings):
        trial = phi(alpha)
        if trial[3] is not None and trial[0] <= f0 + opts.c1 * alpha * dphi0:
            return trial
        alpha *= 0.5
    return None


def bfgs_minimize(objective: Objective, x0, opts: OptimOptions | None = None,
                  free_mask=None, callback: Callable[[np.ndarray, float], None] | None = None
                  ) -> BfgsResult:
    """Minimize ``objective`` (returning value and gradient) by BFGS.

    ``free_mask`` (boolean, same length as ``x0``) freezes the coordinates
    marked False: their gradient entries are zeroed so they never move.
    ``callback(x, value)`` sees every accepted iterate. The accepted values
    never increase.
    """
    opts = opts or OptimOptions()
    x = np.array(x0, dtype=float)
    mask = None if free_mask is None else np.asarray(free_mask, dtype=bool).astype(float)
    try:
        f, g = objective(x)
    except DegenerateCovariance as exc:
        raise InfeasibleStart(str(exc)) from None
    if not np.isfinite(f):
        raise InfeasibleStart(f"objective is {f} at the starting point")
    if mask is not None:
        g = g * mask
    evaluations = 1
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    if gnorm <= opts.grad_tol:
        return BfgsResult(x, float(f), gnorm, 0, GRAD_TOL, evaluations)

    size = x.size
    eye = np.eye(size)
    hinv = eye / np.linalg.norm(g)
    reason = MAX_ITERS
    iterations = 0
    while iterations < opts.max_iters:
        p = -(hinv @ g)
        dphi0 = float(g @ p)
        if not dphi0 < 0:
            hinv = eye / np.linalg.norm(g)
            p = -(hinv @ g)
            dphi0 = float(g @ p)
        phi = _LineFunction(objective, x, p, mask)
        trial, best = _strong_wolfe(phi, f, dphi0, opts)
        if trial is None:
            trial = _armijo(phi, f, dphi0, opts)
        if trial is None and best is not None:
            trial = best
        evaluations += phi.evaluations
        if trial is None:
            reason = LINE_SEARCH_FAILED
            break
        f_new, _, x_new, g_new, _ = trial
        iterations += 1
        s = x_new - x
        y = g_new - g
        x, f, g = x_new, float(f_new), g_new
        if callback is not None:
            callback(x, f)
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= opts.grad_tol:
            reason = GRAD_TOL
            break
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            hy = hinv @ y
            hinv = (hinv - rho * (np.outer(hy, s) + np.outer(s, hy))
                    + (rho * rho * float(y @ hy) + rho) * np.outer(s, s))
    return BfgsResult(x, f, gnorm, iterations, reason, evaluations)


@dataclass
class FitReport:
    """Outcome of a multi-start fit; ``weights`` are canonicalized."""

    cost_kind: str
    spec: MlpSpec
    n: int
    weights: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    restarts: int
    restart_values: list
    gamma_hat: np.ndarray
    reason: str
    free_mask: np.ndarray | None = None
    gamma: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_free(self) -> int:
        return self.spec.param_count if self.free_mask is None else int(np.sum(self.free_mask))

    def to_dict(self) -> dict:
        return {
            "cost_kind": self.cost_kind,
            "arch": [self.spec.input_dim, self.spec.hidden, self.spec.output_dim],
            "n": self.n,
            "weights": [float(v) for v in self.weights],
            "value": float(self.value),
            "grad_norm": float(self.grad_norm),
            "iterations": int(self.iterations),
            "restarts": int(self.restarts),
            "restart_values": [float(v) for v in self.restart_values],
            "gamma_hat": np.asarray(self.gamma_hat).tolist(),
            "logdet_gamma_hat": _safe_logdet(self.gamma_hat),
            "reason": self.reason,
            "frozen": ([] if self.free_mask is None
                       else [int(i) for i in np.flatnonzero(~self.free_mask)]),
        }


def _safe_logdet(gamma) -> float | None:
    sign, value = np.linalg.slogdet(gamma)
    return float(value) if sign > 0 else None


def objective_for(kind: CostKind, spec: MlpSpec, data: Dataset) -> Objective:
    def objective(weights):
        return _cost.value_and_grad(kind, spec, weights, data)
    return objective


def multistart_fit(spec: MlpSpec, data: Dataset, kind: CostKind, restarts: int = 20,
                   init_half_range: float = 0.7, seed=None, opts: OptimOptions | None = None,
                   free_mask=None, starts: Sequence = ()) -> FitReport:
    """Best of ``len(starts) + restarts`` BFGS runs.

    Explicit ``starts`` (warm starts) run first, then ``restarts`` random
    initializations, restart ``i`` drawing from substream ``i`` of ``seed``.
    Frozen coordinates (``free_mask`` False) are held at 0 in random starts
    and at their given value in warm starts. Ties keep the earliest run.
    """
    if restarts < 0 or restarts + len(starts) < 1:
        raise ValueError("need at least one start")
    data.check(spec)
    opts = opts or OptimOptions()
    mask = None if free_mask is None else np.asarray(free_mask, dtype=bool)
    objective = objective_for(kind, spec, data)
    initial = [np.array(s, dtype=float) for s in starts]
    for i in range(restarts):
        w0 = random_init(spec, init_half_range, generator(seed, i))
        if mask is not None:
            w0[~mask] = 0.0
        initial.append(w0)

    results: list[BfgsResult | None] = []
    for w0 in initial:
        try:
            results.append(bfgs_minimize(objective, w0, opts, free_mask=mask))
        except InfeasibleStart:
            results.append(None)
    values = [math.inf if r is None else r.value for r in results]
    if all(r is None for r in results):
        raise AllRestartsInfeasible(f"all {len(results)} starts were infeasible for {kind} cost")
    best_index = int(np.argmin(values))
    best = results[best_index]
    index, sign = canonical_map(spec, best.x)
    weights = best.x[index] * sign + 0.0
    canon_mask = None if mask is None else mask[index]
    resid = _cost.residuals(spec, weights, data)
    return FitReport(
        cost_kind=kind.name, spec=spec, n=data.n, weights=weights, value=best.value,
        grad_norm=best.grad_norm, iterations=best.iterations, restarts=len(results),
        restart_values=values, gamma_hat=_cost.empirical_cov(resid), reason=best.reason,
        free_mask=canon_mask, gamma=kind.gamma,
    )


@dataclass
class FglsRound:
    """One round of iterated FGLS: the weighting used and the resulting fit."""

    round: int
    weights: np.ndarray
    weighting: np.ndarray | None
    cov: np.ndarray
    logdet_value: float
    fit: FitReport


def fgls_iterate(spec: MlpSpec, data: Dataset, rounds: int = 5, restarts: int = 20,
                 seed=None, opts: OptimOptions | None = None,
                 init_half_range: float = 0.7) -> list[FglsRound]:
    """Iterated feasible GLS: OLS, then ``rounds`` GLS refits.

    Round ``k >= 1`` weights the residuals by the inverse empirical covariance
    of round ``k-1`` and is warm-started at that round's solution (plus
    ``restarts`` fresh random starts from substream ``k`` of ``seed``).
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    history = []
    fit = multistart_fit(spec, data, CostKind.mse(), restarts, init_half_range,
                         substream(seed, 0), opts)
    history.append(_fgls_round(0, fit, None, spec, data))
    for k in range(1, rounds + 1):
        weighting = history[-1].cov
        try:
            kind = CostKind.gls(weighting)
        except Exception as exc:
            raise DegenerateCovariance(f"round {k} covariance is not positive-definite") from exc
        fit = multistart_fit(spec, data, kind, restarts, init_half_range, substream(seed, k),
                             opts, starts=[history[-1].weights])
        history.append(_fgls_round(k, fit, weighting, spec, data))
        log.debug("fgls round %d: U_n=%.10g", k, history[-1].logdet_value)
    return history


def _fgls_round(k, fit, weighting, spec, data) -> FglsRound:
    cov = _cost.empirical_cov(_cost.residuals(spec, fit.weights, data))
    value = _cost.cost_value(CostKind.logdet(), spec, fit.weights, data)
    return FglsRound(k, fit.weights, weighting, cov, value, fit)
