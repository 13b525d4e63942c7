"""One-hidden-layer tanh MLP with linear outputs.

Flat weight layout (``s = d*(H+1) + H*(L+1)`` entries)::

    a_{1,0} .. a_{1,H}, a_{2,0} .. a_{d,H}, w_{1,0} .. w_{1,L}, w_{2,0} .. w_{H,L}

``a_{i,0}`` is the bias of output ``i`` and ``a_{i,j}`` the weight from hidden
unit ``j``; ``w_{j,0}`` is the bias of hidden unit ``j`` and ``w_{j,k}`` the
weight from input ``k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: int
    output_dim: int

    def __post_init__(self):
        for name in ("input_dim", "hidden", "output_dim"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @classmethod
    def parse(cls, text: str) -> "MlpSpec":
        """Parse ``"L,H,d"``."""
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) != 3:
            raise ValueError(f"architecture must be 'L,H,d', got {text!r}")
        return cls(*(int(p) for p in parts))

    @property
    def param_count(self) -> int:
        return self.output_dim * (self.hidden + 1) + self.hidden * (self.input_dim + 1)

    @property
    def n_output_weights(self) -> int:
        return self.output_dim * (self.hidden + 1)

    def __str__(self) -> str:
        return f"{self.input_dim}-{self.hidden}-{self.output_dim}"

    def unpack(self, weights) -> tuple[np.ndarray, np.ndarray]:
        """Split a flat vector into ``a`` (d x (H+1)) and ``w`` (H x (L+1)) views."""
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.param_count,):
            raise DimensionMismatch(
                f"{self} expects {self.param_count} weights, got shape {weights.shape}")
        na = self.n_output_weights
        a = weights[:na].reshape(self.output_dim, self.hidden + 1)
        w = weights[na:].reshape(self.hidden, self.input_dim + 1)
        return a, w

    def pack(self, a, w) -> np.ndarray:
        return np.concatenate([np.ravel(a), np.ravel(w)]).astype(float)

    def weight_names(self) -> list[str]:
        names = [f"a[{i + 1},{j}]" for i in range(self.output_dim) for j in range(self.hidden + 1)]
        names += [f"w[{j + 1},{k}]" for j in range(self.hidden) for k in range(self.input_dim + 1)]
        return names


def _inputs(spec: MlpSpec, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != spec.input_dim:
        raise DimensionMismatch(f"{spec} expects inputs with {spec.input_dim} columns, got {z.shape}")
    return z


def hidden_activations(spec: MlpSpec, weights, inputs) -> np.ndarray:
    """``tanh`` of the hidden pre-activations, shape (n, H)."""
    _, w = spec.unpack(weights)
    inputs = _inputs(spec, inputs)
    return np.tanh(inputs @ w[:, 1:].T + w[:, 0])


def forward_batch(spec: MlpSpec, weights, inputs) -> np.ndarray:
    """Network outputs for every row of ``inputs``, shape (n, d)."""
    a, _ = spec.unpack(weights)
    act = hidden_activations(spec, weights, inputs)
    return act @ a[:, 1:].T + a[:, 0]


def forward(spec: MlpSpec, weights, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.input_dim,):
        raise DimensionMismatch(f"{spec} expects an input of length {spec.input_dim}, got {z.shape}")
    return forward_batch(spec, weights, z[None, :])[0]


def batch_jacobian(spec: MlpSpec, weights, inputs) -> np.ndarray:
    """Per-sample Jacobians ``dF(z_t)(i)/dW_k``, shape (n, d, s).

    Row ``i`` only involves the output weights of output ``i``, so the
    a-block of each Jacobian is block diagonal.
    """
    a, _ = spec.unpack(weights)
    inputs = _inputs(spec, inputs)
    act = hidden_activations(spec, weights, inputs)
    n = inputs.shape[0]
    d, H, L = spec.output_dim, spec.hidden, spec.input_dim
    jac = np.zeros((n, d, spec.param_count))
    for i in range(d):
        base = i * (H + 1)
        jac[:, i, base] = 1.0
        jac[:, i, base + 1:base + H + 1] = act
    slope = 1.0 - act * act
    z1 = np.hstack([np.ones((n, 1)), inputs])
    # d out_i / d w_{jk} = a_{ij} * (1 - tanh^2) * z_k
    dw = a[None, :, 1:, None] * slope[:, None, :, None] * z1[:, None, None, :]
    jac[:, :, spec.n_output_weights:] = dw.reshape(n, d, H * (L + 1))
    return jac


def jacobian(spec: MlpSpec, weights, z) -> np.ndarray:
    """Jacobian of the outputs at a single input, shape (d, s)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.input_dim,):
        raise DimensionMismatch(f"{spec} expects an input of length {spec.input_dim}, got {z.shape}")
    return batch_jacobian(spec, weights, z[None, :])[0]


def canonical_map(spec: MlpSpec, weights) -> tuple[np.ndarray, np.ndarray]:
    """Signed permutation sending ``weights`` to its canonical representative.

    Returns ``(index, sign)`` such that ``weights[index] * sign`` is canonical.
    Each hidden unit is flipped so that the first nonzero entry of its input
    row (bias included) is positive, then units are sorted lexicographically
    by input row. All-zero rows keep their sign and sort last.
    """
    a, w = spec.unpack(weights)
    d, H, L = spec.output_dim, spec.hidden, spec.input_dim
    flips = np.ones(H)
    for j in range(H):
        nonzero = np.flatnonzero(w[j])
        if nonzero.size and w[j, nonzero[0]] < 0:
            flips[j] = -1.0
    rows = w * flips[:, None]
    cols = a[:, 1:] * flips[None, :]

    def key(j):
        return (not np.any(rows[j]), tuple(rows[j]), tuple(cols[:, j]))

    order = sorted(range(H), key=key)

    index = np.arange(spec.param_count)
    sign = np.ones(spec.param_count)
    na = spec.n_output_weights
    for new_j, old_j in enumerate(order):
        for i in range(d):
            index[i * (H + 1) + 1 + new_j] = i * (H + 1) + 1 + old_j
            sign[i * (H + 1) + 1 + new_j] = flips[old_j]
        new_row = na + new_j * (L + 1)
        old_row = na + old_j * (L + 1)
        index[new_row:new_row + L + 1] = np.arange(old_row, old_row + L + 1)
        sign[new_row:new_row + L + 1] = flips[old_j]
    return index, sign


def canonicalize(spec: MlpSpec, weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    index, sign = canonical_map(spec, weights)
    # + 0.0 turns -0.0 into 0.0 so flipped zeros serialize identically
    return weights[index] * sign + 0.0


def random_init(spec: MlpSpec, half_range: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform weights on ``[-half_range, half_range]``."""
    if not half_range > 0:
        raise ValueError("half_range must be positive")
    return rng.uniform(-half_range, half_range, size=spec.param_count)


def format_model(spec: MlpSpec, weights) -> str:
    weights = np.asarray(weights, dtype=float)
    spec.unpack(weights)
    values = " ".join(f"{x:.17g}" for x in weights)
    return f"mlp {spec.input_dim} {spec.hidden} {spec.output_dim}\n{values}\n"


def parse_model(text: str) -> tuple[MlpSpec, np.ndarray]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != 2:
        raise ValueError("model file must have exactly two non-empty lines")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "mlp":
        raise ValueError(f"bad model header {lines[0]!r}; expected 'mlp L H d'")
    spec = MlpSpec(int(head[1]), int(head[2]), int(head[3]))
    weights = np.array([float(x) for x in lines[1].split()])
    if weights.shape != (spec.param_count,):
        raise ValueError(f"model {spec} needs {spec.param_count} weights, found {weights.size}")
    if not np.all(np.isfinite(weights)):
        raise ValueError("model weights must be finite")
    return spec, weights


def save_model(path, spec: MlpSpec, weights) -> None:
    Path(path).write_text(format_model(spec, weights))


def load_model(path) -> tuple[MlpSpec, np.ndarray]:
    return parse_model(Path(path).read_text())
