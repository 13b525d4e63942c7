"""Command-line interface.

Exit codes: 0 success, 2 input/config error, 3 every restart infeasible,
4 nesting violation in the chi-square test, 5 gradient check failed,
6 more than 10% of replications failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import gradcheck as _gradcheck
from .cost import CostKind, read_csv, read_matrix, write_csv
from .errors import AllRestartsInfeasible, ConfigError, LogdetMlpError, NestingViolation
from .inference import lr_test, weight_inference
from .model import MlpSpec, save_model
from .optim import OptimOptions, fgls_iterate, multistart_fit
from .sim import (calibration_csv_rows, comparison_csv_rows, gen_iid_regression, gen_nar_series,
                  generator_weights, load_config, manifest, run_calibration, run_comparison,
                  write_json)
from .streams import generator, substream

log = logging.getLogger("logdetmlp")

EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NESTING = 4
EXIT_GRADCHECK = 5
EXIT_FAILURES = 6


class InputError(Exception):
    pass


def _arch(text: str) -> MlpSpec:
    try:
        return MlpSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return value


def _index_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated indices, got {text!r}") from None


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--restarts", type=_positive_int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-range", type=float, default=0.7)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=_non_negative_int, default=500)


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--deterministic", action="store_true",
                   help="ordered reductions for bit-identical summaries")
    p.add_argument("--replications", type=_positive_int, default=None, help="override config")
    p.add_argument("--restarts", type=_non_negative_int, default=None, help="override config")
    p.add_argument("--seed", type=int, default=None, help="override config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logdetmlp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit an MLP to a CSV dataset")
    p.add_argument("data")
    p.add_argument("--arch", type=_arch, required=True, help="L,H,d")
    p.add_argument("--cost", default="logdet",
                   help="mse | logdet | gls:GAMMA_FILE | fgls[:ROUNDS]")
    _add_fit_options(p)
    p.add_argument("--out", help="FitReport JSON path (default: stdout)")
    p.add_argument("--model-out", help="write the canonicalized model here")

    p = sub.add_parser("test", help="chi-square test that the frozen weights are zero")
    p.add_argument("data")
    p.add_argument("--arch", type=_arch, required=True)
    p.add_argument("--freeze", type=_index_list, default=[])
    _add_fit_options(p)
    p.add_argument("--out", help="TestReport JSON path (default: stdout)")

    p = sub.add_parser("gradcheck", help="compare analytic derivatives with finite differences")
    p.add_argument("--arch", type=_arch, default=MlpSpec(2, 3, 2))
    p.add_argument("--n", type=_positive_int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cost", choices=["mse", "gls", "logdet"], default="logdet")
    p.add_argument("--instances", type=_positive_int, default=1)

    p = sub.add_parser("simulate", help="write one simulated dataset")
    _add_run_options(p)
    p = sub.add_parser("experiment", help="estimator comparison over replications")
    _add_run_options(p)
    p = sub.add_parser("calibrate", help="distribution of T_n under the null")
    _add_run_options(p)
    return parser


def _emit_json(payload: dict, path: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _load_data(args):
    try:
        return read_csv(args.data, args.arch)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _options(args) -> OptimOptions:
    try:
        return OptimOptions(grad_tol=args.grad_tol, max_iters=args.max_iters)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_fit(args) -> int:
    data = _load_data(args)
    opts = _options(args)
    spec = args.arch
    extra = {}
    if args.cost.startswith("fgls"):
        _, _, rounds = args.cost.partition(":")
        try:
            rounds = int(rounds) if rounds else 5
        except ValueError:
            raise InputError(f"bad FGLS round count in {args.cost!r}") from None
        history = fgls_iterate(spec, data, rounds, args.restarts, args.seed, opts, args.init_range)
        fit = history[-1].fit
        extra["fgls_logdet_trajectory"] = [r.logdet_value for r in history]
    else:
        if args.cost.startswith("gls:"):
            try:
                gamma = read_matrix(args.cost[4:], spec.output_dim)
                kind = CostKind.gls(gamma)
            except (OSError, ValueError) as exc:
                raise InputError(f"GLS covariance: {exc}") from None
        elif args.cost in ("mse", "logdet"):
            kind = CostKind(args.cost)
        else:
            raise InputError(f"unknown cost {args.cost!r}")
        fit = multistart_fit(spec, data, kind, args.restarts, args.init_range,
                             args.seed, opts)
    payload = fit.to_dict()
    payload["fgls_logdet_trajectory"] = extra.get("fgls_logdet_trajectory")
    _emit_json(payload, args.out)
    if args.model_out:
        save_model(args.model_out, spec, fit.weights)
    return 0


def cmd_test(args) -> int:
    data = _load_data(args)
    opts = _options(args)
    spec = args.arch
    frozen = args.freeze
    if len(set(frozen)) != len(frozen) or any(not 0 <= i < spec.param_count for i in frozen):
        raise InputError(f"--freeze indices must be distinct and in [0, {spec.param_count})")
    mask = np.ones(spec.param_count, dtype=bool)
    mask[frozen] = False
    logdet = CostKind.logdet()
    restricted = multistart_fit(spec, data, logdet, args.restarts, args.init_range,
                                substream(args.seed, 0), opts, free_mask=mask)
    full = multistart_fit(spec, data, logdet, 0, args.init_range, substream(args.seed, 1), opts,
                          starts=[restricted.weights])
    report = lr_test(restricted, full)
    payload = report.to_dict()
    payload["frozen"] = sorted(frozen)
    try:
        payload["wald"] = weight_inference(spec, full.weights, data).to_dict(spec)
    except LogdetMlpError as exc:
        log.warning("weight inference unavailable: %s", exc)
        payload["wald"] = None
    payload["restricted"] = restricted.to_dict()
    payload["full"] = full.to_dict()
    _emit_json(payload, args.out)
    return 0


def cmd_gradcheck(args) -> int:
    worst_grad = worst_hess = 0.0
    for i in range(args.instances):
        result = _gradcheck.check_instance(args.arch, args.n, args.seed, args.cost, instance=i)
        worst_grad = max(worst_grad, result.grad_error)
        worst_hess = max(worst_hess, result.hess_error)
    ok = worst_grad < _gradcheck.GRAD_THRESHOLD and worst_hess < _gradcheck.HESS_THRESHOLD
    print(f"arch {args.arch} cost {args.cost} n {args.n} instances {args.instances}")
    print(f"max relative gradient error: {worst_grad:.3e} (threshold {_gradcheck.GRAD_THRESHOLD:g})")
    print(f"max relative Hessian error:  {worst_hess:.3e} (threshold {_gradcheck.HESS_THRESHOLD:g})")
    print("PASS" if ok else "FAIL")
    return 0 if ok else EXIT_GRADCHECK


def _load_run_config(args):
    overrides = {k: getattr(args, k) for k in ("replications", "restarts", "seed")
                 if getattr(args, k) is not None}
    try:
        return load_config(args.config, **overrides)
    except OSError as exc:
        raise InputError(str(exc)) from None
    except (ConfigError, ValueError) as exc:
        raise InputError(f"{args.config}: {exc}") from None


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    config = _load_run_config(args)
    out = _prepare_out(args)
    weights, _ = generator_weights(config)
    rng = generator(config.seed, 1, 0)
    if config.generator == "nar":
        data = gen_nar_series(config.spec, weights, config.n, config.gamma0, rng)
    else:
        data = gen_iid_regression(config.spec, weights, config.n, config.gamma0, rng)
    write_csv(out / "data.csv", data)
    save_model(out / "generator_model.txt", config.spec, weights)
    write_json(out / "manifest.json",
               manifest(config, "simulate", ["data.csv", "generator_model.txt"]))
    return 0


def cmd_experiment(args) -> int:
    config = _load_run_config(args)
    out = _prepare_out(args)
    report = run_comparison(config, jobs=args.jobs, deterministic=args.deterministic)
    _write_csv(out / "replications.csv", comparison_csv_rows(report))
    write_json(out / "summary.json", report.summary_dict())
    save_model(out / "generator_model.txt", config.spec, report.generator_weights)
    write_json(out / "manifest.json", manifest(
        config, "experiment", ["replications.csv", "summary.json", "generator_model.txt"]))
    for name, summ in report.summaries.items():
        print(f"{name}: mean gamma {np.round(summ.mean_gamma, 4).tolist()} "
              f"mean det {summ.mean_det:.4f} det of mean {summ.det_of_mean:.4f}")
    if report.too_many_failures:
        print(f"{report.n_failed}/{len(report.rows)} replications failed", file=sys.stderr)
        return EXIT_FAILURES
    return 0


def cmd_calibrate(args) -> int:
    config = _load_run_config(args)
    if not config.freeze:
        log.warning("no 'freeze' indices in config: df = 0")
    out = _prepare_out(args)
    report = run_calibration(config, jobs=args.jobs)
    _write_csv(out / "replications.csv", calibration_csv_rows(report))
    write_json(out / "summary.json", report.summary_dict())
    save_model(out / "generator_model.txt", config.spec, report.generator_weights)
    write_json(out / "manifest.json", manifest(
        config, "calibrate", ["replications.csv", "summary.json", "generator_model.txt"]))
    print(f"df {report.df}: mean T_n {report.mean_statistic:.4f}, "
          f"KS {report.ks_statistic:.4f} (p = {report.ks_pvalue:.4f})")
    if report.too_many_failures:
        print(f"{report.n_failed}/{len(report.rows)} replications failed", file=sys.stderr)
        return EXIT_FAILURES
    return 0


COMMANDS = {
    "fit": cmd_fit, "test": cmd_test, "gradcheck": cmd_gradcheck, "simulate": cmd_simulate,
    "experiment": cmd_experiment, "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AllRestartsInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NestingViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NESTING


if __name__ == "__main__":
    sys.exit(main())
