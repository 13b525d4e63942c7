"""Residuals, empirical covariance and the three cost functions.

* MSE:    (1/n) sum_t |r_t|^2
* GLS:    (1/n) sum_t r_t' G^{-1} r_t  for a fixed SPD matrix G
* LOGDET: log det((1/n) sum_t r_t r_t')

All three gradients share the form ``-(2/n) sum_t J_t' M r_t`` with ``M`` the
identity, ``G^{-1}`` or the inverse empirical covariance; the sum is
accumulated by back-propagating the weighted residuals ``M r_t`` through the
network, which avoids materializing per-sample Jacobians.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import linalg_spd
from .errors import DegenerateCovariance, DimensionMismatch, NotPositiveDefinite
from .model import MlpSpec, batch_jacobian

MSE = "mse"
GLS = "gls"
LOGDET = "logdet"

HESSIAN_FD_STEP = 1e-5


@dataclass(frozen=True)
class Dataset:
    """``n`` paired records: inputs (n x L) and targets (n x d)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if inputs.ndim != 2 or targets.ndim != 2:
            raise DimensionMismatch("inputs and targets must be 2-D")
        if inputs.shape[0] != targets.shape[0]:
            raise DimensionMismatch(
                f"{inputs.shape[0]} input rows but {targets.shape[0]} target rows")
        if inputs.shape[0] < 1:
            raise ValueError("dataset must have at least one record")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @cached_property
    def augmented_inputs(self) -> np.ndarray:
        """Inputs with a leading column of ones (bias input)."""
        return np.hstack([np.ones((self.n, 1)), self.inputs])

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]

    def check(self, spec: MlpSpec) -> None:
        if spec.input_dim != self.input_dim or spec.output_dim != self.output_dim:
            raise DimensionMismatch(
                f"architecture {spec} does not match data with {self.input_dim} inputs "
                f"and {self.output_dim} outputs")


@dataclass(frozen=True)
class CostKind:
    name: str
    gamma: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.name not in (MSE, GLS, LOGDET):
            raise ValueError(f"unknown cost kind {self.name!r}")
        if self.name == GLS:
            if self.gamma is None:
                raise ValueError("GLS cost needs a covariance matrix")
            gamma = linalg_spd.symmetrize(self.gamma)
            linalg_spd.cholesky(gamma)
            object.__setattr__(self, "gamma", gamma)
            object.__setattr__(self, "_gamma_inv", linalg_spd.spd_inverse(gamma))

    @classmethod
    def mse(cls) -> "CostKind":
        return cls(MSE)

    @classmethod
    def gls(cls, gamma) -> "CostKind":
        return cls(GLS, gamma)

    @classmethod
    def logdet(cls) -> "CostKind":
        return cls(LOGDET)

    @property
    def gamma_inv(self) -> np.ndarray | None:
        return getattr(self, "_gamma_inv", None)

    def __str__(self) -> str:
        return self.name


def residuals(spec: MlpSpec, weights, data: Dataset) -> np.ndarray:
    """``targets - F_W(inputs)``, shape (n, d)."""
    data.check(spec)
    a, w = spec.unpack(weights)
    act = np.tanh(data.inputs @ w[:, 1:].T + w[:, 0])
    return data.targets - (act @ a[:, 1:].T + a[:, 0])


def empirical_cov(resid) -> np.ndarray:
    resid = np.atleast_2d(np.asarray(resid, dtype=float))
    return linalg_spd.symmetrize(resid.T @ resid / resid.shape[0])


def _logdet_inverse(gamma: np.ndarray) -> tuple[float, np.ndarray]:
    try:
        return linalg_spd.logdet_and_inverse(gamma)
    except NotPositiveDefinite as exc:
        raise DegenerateCovariance(f"empirical residual covariance is singular: {exc}") from None


def value_and_grad(kind: CostKind, spec: MlpSpec, weights, data: Dataset,
                   want_grad: bool = True) -> tuple[float, np.ndarray | None]:
    """Cost value and (optionally) its gradient from one forward pass."""
    data.check(spec)
    a, w = spec.unpack(weights)
    n = data.n
    z1 = data.augmented_inputs
    # act1 = [1, tanh(hidden)] so the output bias rides along in the products
    act1 = np.empty((n, spec.hidden + 1), order="F")
    act1[:, 0] = 1.0
    np.tanh(z1 @ np.ascontiguousarray(w.T), out=act1[:, 1:])
    resid = data.targets - act1 @ np.ascontiguousarray(a.T)
    if kind.name == MSE:
        weighted = resid
        value = float(np.sum(resid * resid)) / n
    elif kind.name == GLS:
        weighted = resid @ kind.gamma_inv
        value = float(np.sum(weighted * resid)) / n
    else:
        value, gamma_inv = _logdet_inverse(resid.T @ resid / n)
        weighted = resid @ gamma_inv
    if not (want_grad and np.isfinite(value)):
        return value, None
    # back-propagate the weighted residuals: sum_t J_t' M r_t
    act = act1[:, 1:]
    grad_a = weighted.T @ act1
    delta = (weighted @ a[:, 1:]) * (1.0 - act * act)
    grad_w = delta.T @ z1
    grad = np.concatenate([grad_a.ravel(), grad_w.ravel()])
    grad *= -2.0 / n
    return value, grad


def cost_value(kind: CostKind, spec: MlpSpec, weights, data: Dataset) -> float:
    return value_and_grad(kind, spec, weights, data, want_grad=False)[0]


def cost_grad(kind: CostKind, spec: MlpSpec, weights, data: Dataset) -> np.ndarray:
    return value_and_grad(kind, spec, weights, data)[1]


def logdet_hessian(spec: MlpSpec, weights, data: Dataset,
                   fd_step: float = HESSIAN_FD_STEP) -> np.ndarray:
    """Hessian of the log-det cost.

    With ``A_k = -(1/n) sum_t J_tk r_t'``, ``B_kl = (1/n) sum_t J_tk J_tl'``
    and ``C_kl = -(1/n) sum_t r_t (d2F_t/dW_k dW_l)'``::

        H_kl = -2 tr(G^-1 (A_l + A_l') G^-1 A_k) + 2 tr(G^-1 B_kl) + 2 tr(G^-1 C_kl)

    where ``G`` is the empirical covariance. Second derivatives of the network
    come from central differences of the analytic Jacobian with step
    ``fd_step * max(1, |W_l|)``.
    """
    weights = np.asarray(weights, dtype=float)
    resid = residuals(spec, weights, data)
    n = data.n
    _, ginv = _logdet_inverse(empirical_cov(resid))
    jac = batch_jacobian(spec, weights, data.inputs)

    amat = -np.einsum("tik,tj->kij", jac, resid) / n
    left = ginv[None] @ amat            # G^-1 A_k
    right = amat @ ginv[None]           # A_k G^-1
    # tr(G^-1 A_l G^-1 A_k) + tr(G^-1 A_l' G^-1 A_k)
    term_a = np.einsum("lij,kji->kl", left, left) + np.einsum("lij,kij->kl", right, left)
    term_b = np.einsum("tik,ij,tjl->kl", jac, ginv, jac) / n

    weighted = resid @ ginv
    term_c = np.empty((spec.param_count, spec.param_count))
    for l in range(spec.param_count):
        h = fd_step * max(1.0, abs(weights[l]))
        up = weights.copy()
        up[l] += h
        down = weights.copy()
        down[l] -= h
        djac = (batch_jacobian(spec, up, data.inputs) - batch_jacobian(spec, down, data.inputs)) / (2 * h)
        term_c[:, l] = -np.einsum("tik,ti->k", djac, weighted) / n

    hess = -2.0 * term_a + 2.0 * term_b + 2.0 * term_c
    return 0.5 * (hess + hess.T)


def read_csv(path, spec: MlpSpec | None = None, input_dim: int | None = None,
             output_dim: int | None = None) -> Dataset:
    """Read a ``z1,...,zL,y1,...,yd`` CSV file.

    Columns are located by header name, so their order is free; a missing
    column raises ``ValueError`` naming it.
    """
    if spec is not None:
        input_dim, output_dim = spec.input_dim, spec.output_dim
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = [row for row in reader if row and any(c.strip() for c in row)]
    if input_dim is None:
        input_dim = sum(1 for h in header if h.startswith("z"))
    if output_dim is None:
        output_dim = sum(1 for h in header if h.startswith("y"))
    wanted = [f"z{k + 1}" for k in range(input_dim)] + [f"y{i + 1}" for i in range(output_dim)]
    positions = []
    for name in wanted:
        if name not in header:
            raise ValueError(f"{path}: missing column {name!r}")
        positions.append(header.index(name))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    values = np.empty((len(rows), len(wanted)))
    for r, row in enumerate(rows):
        try:
            values[r] = [float(row[p]) for p in positions]
        except (ValueError, IndexError):
            raise ValueError(f"{path}: malformed data row {r + 2}") from None
    return Dataset(values[:, :input_dim], values[:, input_dim:])


def write_csv(path, data: Dataset) -> None:
    header = [f"z{k + 1}" for k in range(data.input_dim)] + [f"y{i + 1}" for i in range(data.output_dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for z, y in zip(data.inputs, data.targets):
            writer.writerow([f"{v:.17g}" for v in np.concatenate([z, y])])


def read_matrix(path, dim: int | None = None) -> np.ndarray:
    """Square matrix stored as whitespace- or comma-separated values, row-major."""
    text = Path(path).read_text()
    values = [float(x) for x in text.replace(",", " ").split()]
    size = int(round(len(values) ** 0.5))
    if size * size != len(values) or (dim is not None and size != dim):
        raise ValueError(f"{path}: expected {dim or 'a square number of'}x{dim or ''} values, "
                         f"found {len(values)}")
    return np.array(values).reshape(size, size)
