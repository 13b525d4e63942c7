"""Finite-difference checks of the analytic gradient and log-det Hessian."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import CostKind, Dataset, cost_grad, cost_value, logdet_hessian
from .model import MlpSpec, forward_batch, random_init
from .sim import gen_noise
from .streams import generator

GRAD_STEP = 1e-6
HESS_STEP = 1e-5
GRAD_THRESHOLD = 1e-5
HESS_THRESHOLD = 1e-3


def relative_error(approx, exact) -> float:
    """Normwise relative error ``max|approx - exact| / max|exact|``."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return float(np.max(np.abs(approx - exact)) / max(float(np.max(np.abs(exact))), 1e-12))


def fd_gradient(kind: CostKind, spec: MlpSpec, weights, data: Dataset,
                step: float = GRAD_STEP) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    out = np.empty(weights.size)
    for k in range(weights.size):
        up = weights.copy()
        up[k] += step
        down = weights.copy()
        down[k] -= step
        out[k] = (cost_value(kind, spec, up, data) - cost_value(kind, spec, down, data)) / (2 * step)
    return out


def fd_hessian(spec: MlpSpec, weights, data: Dataset, step: float = HESS_STEP) -> np.ndarray:
    """Central differences of the analytic log-det gradient, symmetrized."""
    weights = np.asarray(weights, dtype=float)
    kind = CostKind.logdet()
    cols = []
    for k in range(weights.size):
        h = step * max(1.0, abs(weights[k]))
        up = weights.copy()
        up[k] += h
        down = weights.copy()
        down[k] -= h
        cols.append((cost_grad(kind, spec, up, data) - cost_grad(kind, spec, down, data)) / (2 * h))
    hess = np.array(cols)
    return 0.5 * (hess + hess.T)


def random_spd(d: int, rng: np.random.Generator) -> np.ndarray:
    m = rng.standard_normal((d, d))
    return m @ m.T + d * np.eye(d)


def random_instance(spec: MlpSpec, n: int, rng: np.random.Generator):
    """Data from a random network plus correlated noise, and a nearby evaluation point."""
    truth = random_init(spec, 1.0, rng)
    gamma = random_spd(spec.output_dim, rng)
    inputs = rng.standard_normal((n, spec.input_dim))
    targets = forward_batch(spec, truth, inputs) + gen_noise(gamma, n, rng)
    point = truth + 0.3 * rng.standard_normal(spec.param_count)
    return Dataset(inputs, targets), point, gamma


@dataclass
class CheckResult:
    spec: MlpSpec
    cost: str
    seed: int
    grad_error: float
    hess_error: float

    @property
    def passed(self) -> bool:
        return self.grad_error < GRAD_THRESHOLD and self.hess_error < HESS_THRESHOLD


def check_instance(spec: MlpSpec, n: int, seed: int, cost: str = "logdet",
                   instance: int = 0) -> CheckResult:
    rng = generator(seed, instance)
    data, point, gamma = random_instance(spec, n, rng)
    kind = CostKind.gls(gamma) if cost == "gls" else CostKind(cost)
    grad_error = relative_error(cost_grad(kind, spec, point, data), fd_gradient(kind, spec, point, data))
    hess_error = relative_error(logdet_hessian(spec, point, data), fd_hessian(spec, point, data))
    return CheckResult(spec, cost, seed, grad_error, hess_error)
