"""Data generators, the replication engine and the two simulation studies.

* :func:`run_comparison` fits each replication with several cost functions
  and compares the estimated noise covariances.
* :func:`run_calibration` computes the nested-model statistic ``T_n`` under
  a true null hypothesis and compares its law with chi-square.

Replication ``r`` draws its data from substream ``(1, r)`` of the master
seed and its optimizer starts from substream ``(2, r)``; the generator
weights come from substream ``(0, attempt)``. Results therefore do not
depend on execution order or on the number of worker processes.
"""
from __future__ import annotations

import json
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from . import __version__, linalg_spd
from .cost import CostKind, Dataset, empirical_cov, residuals
from .errors import ConfigError, Diverged, LogdetMlpError
from .inference import chi2_cdf, lr_test
from .model import MlpSpec, forward, forward_batch, load_model, random_init
from .optim import OptimOptions, multistart_fit
from .streams import generator, substream

log = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e6
MAX_REDRAWS = 100
MAX_FAILURE_FRACTION = 0.10
DOMINANCE_TOL = 1e-6


# --------------------------------------------------------------------------
# generators

def gen_noise(gamma0, count: int, rng: np.random.Generator) -> np.ndarray:
    """Centered Gaussian rows with covariance ``gamma0``.

    An all-zero ``gamma0`` gives exact zeros (noiseless data); any other
    matrix must be positive-definite.
    """
    gamma0 = linalg_spd.symmetrize(gamma0)
    d = gamma0.shape[0]
    if not np.any(gamma0):
        return np.zeros((count, d))
    low = linalg_spd.cholesky(gamma0)
    return rng.standard_normal((count, d)) @ low.T


def gen_nar_series(spec: MlpSpec, weights, n: int, gamma0, rng: np.random.Generator,
                   bound: float = DIVERGENCE_BOUND) -> Dataset:
    """Autoregressive series ``Y_{t+1} = F(Y_t) + e_{t+1}`` from ``Y_0 = 0``.

    Returns the ``n`` pairs ``(Y_t, Y_{t+1})``.
    """
    if spec.input_dim != spec.output_dim:
        raise ValueError(f"autoregressive generation needs L == d, got {spec}")
    noise = gen_noise(gamma0, n, rng)
    series = np.zeros((n + 1, spec.output_dim))
    for t in range(n):
        series[t + 1] = forward(spec, weights, series[t]) + noise[t]
        if not np.all(np.abs(series[t + 1]) <= bound):
            raise Diverged(f"series exceeded {bound:g} at step {t + 1}")
    return Dataset(series[:-1], series[1:])


def standard_normal_inputs(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((count, dim))


def gen_iid_regression(spec: MlpSpec, weights, n: int, gamma0, rng: np.random.Generator,
                       input_sampler: Callable | None = None) -> Dataset:
    """``y_t = F(z_t) + e_t`` with i.i.d. inputs (standard normal by default)."""
    sampler = input_sampler or standard_normal_inputs
    inputs = np.asarray(sampler(n, spec.input_dim, rng), dtype=float).reshape(n, spec.input_dim)
    noise = gen_noise(gamma0, n, rng)
    return Dataset(inputs, forward_batch(spec, weights, inputs) + noise)


# --------------------------------------------------------------------------
# configuration

CONFIG_KEYS = {
    "arch", "n", "replications", "restarts", "seed", "gamma0", "w0_file", "w0_range",
    "costs", "freeze", "generator", "init_range", "grad_tol", "max_iters", "truth_start",
    "warm_logdet",
}
COST_NAMES = ("logdet", "mse", "gls_true")


@dataclass
class ExperimentConfig:
    spec: MlpSpec
    gamma0: np.ndarray
    n: int = 1000
    replications: int = 50
    restarts: int = 20
    seed: int = 0
    costs: tuple = ("logdet", "mse")
    w0_file: str | None = None
    w0_range: float = 2.0
    freeze: tuple = ()
    generator: str = "nar"
    init_range: float = 0.7
    grad_tol: float = 1e-8
    max_iters: int = 500
    truth_start: bool = False
    warm_logdet: bool = False

    def __post_init__(self):
        self.gamma0 = linalg_spd.symmetrize(self.gamma0)
        d = self.spec.output_dim
        if self.gamma0.shape != (d, d):
            raise ConfigError(f"gamma0 must be {d}x{d} for architecture {self.spec}")
        try:
            linalg_spd.cholesky(self.gamma0)
        except LogdetMlpError:
            raise ConfigError("gamma0 must be positive-definite") from None
        if self.n <= d:
            raise ConfigError("n must exceed the output dimension")
        if self.replications < 1 or self.restarts < 0:
            raise ConfigError("replications must be >= 1 and restarts >= 0")
        if self.generator not in ("nar", "iid"):
            raise ConfigError("generator must be 'nar' or 'iid'")
        if self.generator == "nar" and self.spec.input_dim != d:
            raise ConfigError("the autoregressive generator needs input_dim == output_dim")
        for name in self.costs:
            if name not in COST_NAMES:
                raise ConfigError(f"unknown cost {name!r}; choose from {', '.join(COST_NAMES)}")
        s = self.spec.param_count
        if len(set(self.freeze)) != len(self.freeze) or any(not 0 <= i < s for i in self.freeze):
            raise ConfigError(f"freeze indices must be distinct and in [0, {s})")
        if self.w0_range <= 0 or self.init_range <= 0:
            raise ConfigError("w0_range and init_range must be positive")

    @property
    def options(self) -> OptimOptions:
        return OptimOptions(grad_tol=self.grad_tol, max_iters=self.max_iters)

    @property
    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.spec.param_count, dtype=bool)
        mask[list(self.freeze)] = False
        return mask

    def as_dict(self) -> dict:
        return {
            "arch": [self.spec.input_dim, self.spec.hidden, self.spec.output_dim],
            "gamma0": self.gamma0.tolist(), "n": self.n, "replications": self.replications,
            "restarts": self.restarts, "seed": self.seed, "costs": list(self.costs),
            "w0_file": self.w0_file, "w0_range": self.w0_range, "freeze": list(self.freeze),
            "generator": self.generator, "init_range": self.init_range,
            "grad_tol": self.grad_tol, "max_iters": self.max_iters,
            "truth_start": self.truth_start, "warm_logdet": self.warm_logdet,
        }


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _int_list(value: str) -> tuple:
    return tuple(int(v) for v in value.replace(",", " ").split())


def parse_config(text: str, base_dir: Path | str | None = None, **overrides) -> ExperimentConfig:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    if "arch" not in raw or "gamma0" not in raw:
        raise ConfigError("config needs at least 'arch' and 'gamma0'")
    if "w0_file" in raw and "w0_range" in raw:
        raise ConfigError("give either w0_file or w0_range, not both")
    try:
        spec = MlpSpec.parse(raw["arch"])
        values = [float(v) for v in raw["gamma0"].replace(",", " ").split()]
        d = spec.output_dim
        if len(values) != d * d:
            raise ConfigError(f"gamma0 needs {d * d} values, got {len(values)}")
        kwargs = {"spec": spec, "gamma0": np.array(values).reshape(d, d)}
        for key in ("n", "replications", "restarts", "seed", "max_iters"):
            if key in raw:
                kwargs[key] = int(raw[key])
        for key in ("w0_range", "init_range", "grad_tol"):
            if key in raw:
                kwargs[key] = float(raw[key])
        for key in ("truth_start", "warm_logdet"):
            if key in raw:
                kwargs[key] = _parse_bool(raw[key])
        if "costs" in raw:
            kwargs["costs"] = tuple(c.strip() for c in raw["costs"].split(",") if c.strip())
        if "freeze" in raw:
            kwargs["freeze"] = _int_list(raw["freeze"])
        if "generator" in raw:
            kwargs["generator"] = raw["generator"]
        if "w0_file" in raw:
            path = Path(raw["w0_file"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            kwargs["w0_file"] = str(path)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


def load_config(path, **overrides) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent, **overrides)


# --------------------------------------------------------------------------
# replication engine

def _generate(config: ExperimentConfig, weights, rng) -> Dataset:
    if config.generator == "nar":
        return gen_nar_series(config.spec, weights, config.n, config.gamma0, rng)
    return gen_iid_regression(config.spec, weights, config.n, config.gamma0, rng)


def generator_weights(config: ExperimentConfig) -> tuple[np.ndarray, int]:
    """Generator weights and the number of redraws needed.

    From ``w0_file`` when given, else uniform on ``[-w0_range, w0_range]``
    (attempt ``k`` uses substream ``(0, k)``), redrawn while a trial series of
    replication 0 diverges. Frozen indices are set to 0.
    """
    if config.w0_file:
        spec, weights = load_model(config.w0_file)
        if spec != config.spec:
            raise ConfigError(f"w0_file architecture {spec} differs from arch {config.spec}")
        weights = weights.copy()
        weights[list(config.freeze)] = 0.0
        return weights, 0
    for attempt in range(MAX_REDRAWS + 1):
        weights = random_init(config.spec, config.w0_range, generator(config.seed, 0, attempt))
        weights[list(config.freeze)] = 0.0
        try:
            _generate(config, weights, generator(config.seed, 1, 0))
        except Diverged:
            log.warning("generator weights draw %d diverged; redrawing", attempt)
            continue
        return weights, attempt
    raise Diverged(f"no stable generator weights after {MAX_REDRAWS} redraws")


def _cost_kind(name: str, config: ExperimentConfig) -> CostKind:
    if name == "gls_true":
        return CostKind.gls(config.gamma0)
    return CostKind(name)


def _comparison_replication(args) -> dict:
    config, weights0, r = args
    row = {"rep": r, "status": "ok", "fits": {}}
    try:
        data = _generate(config, weights0, generator(config.seed, 1, r))
    except LogdetMlpError as exc:
        row["status"] = f"failed: {exc}"
        return row
    starts = [weights0] if config.truth_start else []
    order = sorted(config.costs, key=lambda c: c == "logdet") if config.warm_logdet else config.costs
    fits = {}
    for name in order:
        extra = list(starts)
        if name == "logdet" and config.warm_logdet:
            extra += [fits[c].weights for c in fits]
        try:
            fits[name] = multistart_fit(config.spec, data, _cost_kind(name, config),
                                        config.restarts, config.init_range,
                                        substream(config.seed, 2, r),
                                        config.options, starts=extra)
        except LogdetMlpError as exc:
            row["status"] = f"failed: {exc}"
            return row
    for name in config.costs:
        fit = fits[name]
        row["fits"][name] = {
            "gamma": fit.gamma_hat, "det": float(np.linalg.det(fit.gamma_hat)),
            "value": fit.value, "grad_norm": fit.grad_norm, "iters": fit.iterations,
            "reason": fit.reason, "weights": fit.weights,
        }
    return row


def _run_replications(worker, tasks, jobs: int):
    if jobs <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks, chunksize=1))


def _mean(matrices: list, deterministic: bool) -> np.ndarray:
    stack = np.array(matrices)
    if deterministic:
        total = np.zeros(stack.shape[1:])
        for m in stack:
            total = total + m
        return total / len(stack)
    flat = stack.reshape(len(stack), -1)
    return np.array([math.fsum(col) for col in flat.T]).reshape(stack.shape[1:]) / len(stack)


@dataclass
class KindSummary:
    mean_gamma: np.ndarray
    se_gamma: np.ndarray
    mean_det: float
    det_of_mean: float
    dets: list


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    generator_weights: np.ndarray
    redraws: int
    rows: list
    summaries: dict = field(default_factory=dict)

    @property
    def ok_rows(self) -> list:
        return [r for r in self.rows if r["status"] == "ok"]

    @property
    def n_failed(self) -> int:
        return len(self.rows) - len(self.ok_rows)

    @property
    def failure_fraction(self) -> float:
        return self.n_failed / len(self.rows)

    @property
    def too_many_failures(self) -> bool:
        return self.failure_fraction > MAX_FAILURE_FRACTION

    def dominance(self, reps=None, tol: float = DOMINANCE_TOL) -> tuple[int, int]:
        """(replications with det_logdet <= det_mse + tol, replications compared)."""
        rows = self.ok_rows if reps is None else [r for r in self.ok_rows if r["rep"] in reps]
        hits = sum(r["fits"]["logdet"]["det"] <= r["fits"]["mse"]["det"] + tol for r in rows)
        return hits, len(rows)

    def summary_dict(self) -> dict:
        out = {
            "config": self.config.as_dict(),
            "generator_weights": [float(v) for v in self.generator_weights],
            "generator_redraws": self.redraws,
            "replications": len(self.rows),
            "failed": self.n_failed,
            "kinds": {},
        }
        for name, summ in self.summaries.items():
            out["kinds"][name] = {
                "mean_gamma": summ.mean_gamma.tolist(),
                "se_gamma": summ.se_gamma.tolist(),
                "mean_det": summ.mean_det,
                "det_of_mean": summ.det_of_mean,
            }
        if "logdet" in self.summaries and "mse" in self.summaries:
            hits, total = self.dominance()
            out["dominance"] = {"logdet_le_mse": hits, "compared": total, "tol": DOMINANCE_TOL}
        return out


def summarize(rows: list, costs, deterministic: bool = True) -> dict:
    ok = [r for r in rows if r["status"] == "ok"]
    summaries = {}
    if not ok:
        return summaries
    for name in costs:
        gammas = [r["fits"][name]["gamma"] for r in ok]
        dets = [r["fits"][name]["det"] for r in ok]
        mean_gamma = _mean(gammas, deterministic)
        if len(gammas) > 1:
            se = np.std(np.array(gammas), axis=0, ddof=1) / math.sqrt(len(gammas))
        else:
            se = np.full_like(mean_gamma, math.nan)
        summaries[name] = KindSummary(mean_gamma, se, float(np.mean(dets)),
                                      float(np.linalg.det(mean_gamma)), dets)
    return summaries


def run_comparison(config: ExperimentConfig, jobs: int = 1, deterministic: bool = True,
                   weights0=None) -> ExperimentReport:
    """Fit every replication with each configured cost and aggregate covariances."""
    redraws = 0
    if weights0 is None:
        weights0, redraws = generator_weights(config)
    tasks = [(config, weights0, r) for r in range(config.replications)]
    rows = _run_replications(_comparison_replication, tasks, jobs)
    for row in rows:
        if row["status"] != "ok":
            log.warning("replication %d %s", row["rep"], row["status"])
    report = ExperimentReport(config, weights0, redraws, rows)
    report.summaries = summarize(rows, config.costs, deterministic)
    return report


def comparison_csv_rows(report: ExperimentReport) -> list[list]:
    d = report.config.spec.output_dim
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    header = ["rep", "kind", "det"] + [f"gamma_{i}{j}" for i, j in pairs] + [
        "grad_norm", "iters", "status"]
    lines = [header]
    for row in report.rows:
        for name in report.config.costs:
            fit = row["fits"].get(name)
            if fit is None:
                lines.append([row["rep"], name, "", *[""] * len(pairs), "", "", row["status"]])
                continue
            lines.append([row["rep"], name, f"{fit['det']:.17g}",
                          *[f"{fit['gamma'][i, j]:.17g}" for i, j in pairs],
                          f"{fit['grad_norm']:.6g}", fit["iters"], fit["reason"]])
    return lines


# --------------------------------------------------------------------------
# chi-square calibration

def _calibration_replication(args) -> dict:
    config, weights0, r = args
    row = {"rep": r, "status": "ok"}
    try:
        data = _generate(config, weights0, generator(config.seed, 1, r))
        starts = [weights0] if config.truth_start else []
        seed = substream(config.seed, 2, r)
        restricted = multistart_fit(config.spec, data, CostKind.logdet(), config.restarts,
                                    config.init_range, seed, config.options,
                                    free_mask=config.free_mask, starts=starts)
        full = multistart_fit(config.spec, data, CostKind.logdet(), 0, config.init_range,
                              seed, config.options, starts=[restricted.weights])
        test = lr_test(restricted, full)
    except LogdetMlpError as exc:
        row["status"] = f"failed: {exc}"
        return row
    row.update(statistic=test.statistic, p_value=test.p_value, U_q=test.restricted_value,
               U_s=test.full_value, df=test.df, reason_q=restricted.reason, reason_s=full.reason)
    return row


@dataclass
class CalibrationReport:
    config: ExperimentConfig
    generator_weights: np.ndarray
    rows: list
    df: int
    statistics: np.ndarray
    ks_statistic: float
    ks_pvalue: float

    @property
    def n_failed(self) -> int:
        return sum(r["status"] != "ok" for r in self.rows)

    @property
    def too_many_failures(self) -> bool:
        return self.n_failed / len(self.rows) > MAX_FAILURE_FRACTION

    @property
    def mean_statistic(self) -> float:
        return float(np.mean(self.statistics)) if self.statistics.size else math.nan

    def ecdf(self) -> list[dict]:
        values = np.sort(self.statistics)
        m = values.size
        return [{"T_n": float(v), "ecdf": (i + 1) / m,
                 "chi2_cdf": chi2_cdf(max(float(v), 0.0), self.df) if self.df else 1.0}
                for i, v in enumerate(values)]

    def summary_dict(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "generator_weights": [float(v) for v in self.generator_weights],
            "replications": len(self.rows),
            "failed": self.n_failed,
            "df": self.df,
            "mean_T_n": self.mean_statistic,
            "var_T_n": float(np.var(self.statistics, ddof=1)) if self.statistics.size > 1 else None,
            "ks_statistic": self.ks_statistic,
            "ks_pvalue": self.ks_pvalue,
            "ecdf": self.ecdf(),
        }


def ks_against_chi2(values, df: int) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if df == 0 or values.size == 0:
        return math.nan, math.nan
    result = stats.kstest(values, lambda x: np.array(
        [chi2_cdf(max(float(v), 0.0), df) for v in np.atleast_1d(x)]))
    return float(result.statistic), float(result.pvalue)


def run_calibration(config: ExperimentConfig, jobs: int = 1, weights0=None) -> CalibrationReport:
    """Distribution of ``T_n`` under the null that the ``freeze`` weights are 0."""
    if weights0 is None:
        weights0, _ = generator_weights(config)
    else:
        weights0 = np.array(weights0, dtype=float)
        weights0[list(config.freeze)] = 0.0
    tasks = [(config, weights0, r) for r in range(config.replications)]
    rows = _run_replications(_calibration_replication, tasks, jobs)
    stats_ok = np.array([r["statistic"] for r in rows if r["status"] == "ok"])
    df = len(config.freeze)
    ks_stat, ks_p = ks_against_chi2(stats_ok, df)
    return CalibrationReport(config, weights0, rows, df, stats_ok, ks_stat, ks_p)


def calibration_csv_rows(report: CalibrationReport) -> list[list]:
    lines = [["rep", "T_n", "p_value", "U_q", "U_s", "status"]]
    for row in report.rows:
        if row["status"] == "ok":
            lines.append([row["rep"], f"{row['statistic']:.17g}", f"{row['p_value']:.17g}",
                          f"{row['U_q']:.17g}", f"{row['U_s']:.17g}", "ok"])
        else:
            lines.append([row["rep"], "", "", "", "", row["status"]])
    return lines


def manifest(config: ExperimentConfig, command: str, outputs: list[str]) -> dict:
    return {
        "command": command,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "master_seed": config.seed,
        "substreams": {"generator_weights": "(0, attempt)", "replication_data": "(1, rep)",
                       "optimizer_starts": "(2, rep, restart)"},
        "config": config.as_dict(),
        "outputs": outputs,
    }


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
