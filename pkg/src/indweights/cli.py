"""Command-line interface: ``indweights <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver non-convergence
(the best feasible weights are still written, plus a warning file).
Primary output goes to stdout; logs and errors go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .core import DataError, Dataset, WeightVector, load_dataset
from .diagnostics import balance_table, gps_normal_weights
from .estimators import ESTIMATORS, KERNELS, KernelSpec, NoLocalDataError, adrf_curve, default_bandwidth, default_grid
from .inference import BootstrapConfig, BootstrapFailureError, bootstrap_bands
from .simulation import METHODS, DGPConfig, run_experiment
from .solver import InfeasibleConstraintsError, MomentSpec, SolverConfig, independence_weights

logger = logging.getLogger("indweights")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGENCE = 0, 1, 2, 3
WEIGHT_CHOICES = ("uniform", "dcow", "gps_normal")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _bandwidth(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a positive number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("bandwidth must be positive")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return value


def _data_flags(p: argparse.ArgumentParser, outcome: bool) -> None:
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--exposure", required=True, help="exposure column name")
    p.add_argument("--outcome", required=outcome, default=None, help="outcome column name")
    p.add_argument("--covariates", default=None, help="comma-separated covariate columns (default: all others)")
    p.add_argument("--standardize", action="store_true", help="scale covariates to unit variance first")


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="ridge penalty on the weights")
    p.add_argument("--dim-adjust", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--decorrelate-moments", action="store_true", help="exact first-order decorrelation")
    p.add_argument("--max-iterations", type=_positive_int, default=50000)
    p.add_argument("--seed", type=int, default=0)


def _curve_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimator", choices=ESTIMATORS, default="local_linear")
    p.add_argument("--kernel", choices=KERNELS, default="epanechnikov")
    p.add_argument("--bandwidth", type=_bandwidth, default="auto")
    p.add_argument("--grid-size", type=_positive_int, default=50)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="indweights", description="Independence weights for continuous exposures.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("weights", help="estimate independence weights")
    _data_flags(p, outcome=False)
    _solver_flags(p)
    p.add_argument("--output", required=True, help="weights CSV path")

    p = sub.add_parser("balance", help="balance diagnostics for a weight vector")
    _data_flags(p, outcome=False)
    _solver_flags(p)
    p.add_argument("--weights", default="uniform", help=f"one of {WEIGHT_CHOICES} or a weights CSV path")
    p.add_argument("--max-exposure-power", type=_positive_int, default=5)
    p.add_argument("--max-covariate-power", type=_positive_int, default=5)
    p.add_argument("--no-interactions", action="store_true")
    p.add_argument("--json", action="store_true", help="print JSON instead of the text table")
    p.add_argument("--output", default=None, help="also write the JSON report here")

    p = sub.add_parser("adrf", help="estimate the dose-response curve")
    _data_flags(p, outcome=True)
    _solver_flags(p)
    _curve_flags(p)
    p.add_argument("--weights", default="dcow", help=f"one of {WEIGHT_CHOICES} or a weights CSV path")
    p.add_argument("--output", default=None, help="curve CSV path (default stdout)")

    p = sub.add_parser("bootstrap", help="curve with bootstrap pointwise bands")
    _data_flags(p, outcome=True)
    _solver_flags(p)
    _curve_flags(p)
    p.add_argument("--weights", choices=WEIGHT_CHOICES, default="dcow")
    p.add_argument("--replications", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--max-failures", type=int, default=None)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--output", required=True, help="curve CSV path; a JSON sidecar is written next to it")

    p = sub.add_parser("simulate", help="Monte-Carlo comparison on the synthetic DGP")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--p-continuous", type=int, default=2)
    p.add_argument("--p-binary", type=int, default=4)
    p.add_argument("--confounding-strength", type=float, default=1.0)
    p.add_argument("--effect-type", choices=("constant", "heterogeneous"), default="constant")
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--exposure-family", choices=("normal", "gamma"), default="normal")
    p.add_argument("--outcome-form", choices=("nonlinear", "linear"), default="nonlinear")
    p.add_argument("--methods", default="uniform,dcow,gps_normal", help=f"comma-separated subset of {sorted(METHODS)}")
    p.add_argument("--replications", type=_positive_int, default=20)
    p.add_argument("--outcome-draws", type=_positive_int, default=1)
    p.add_argument("--grid-size", type=_positive_int, default=50)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--max-iterations", type=_positive_int, default=50000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--output", default=None, help="results CSV path (default stdout); config JSON goes alongside")
    return parser


def _emit_error(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(f"indweights: error: {message}\n")
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code, **extra}) + "\n")
    return code


def _load(args) -> Dataset:
    cols = [c.strip() for c in args.covariates.split(",")] if args.covariates else None
    dataset = load_dataset(args.input, args.exposure, args.outcome, cols)
    logger.info("loaded %s: n=%d, p=%d", args.input, dataset.n, dataset.p)
    return dataset.standardized() if args.standardize else dataset


def _solver_config(args) -> SolverConfig:
    return SolverConfig(lam=args.lam, max_iterations=args.max_iterations, seed=args.seed)


def _moments(args) -> Optional[MomentSpec]:
    return MomentSpec.first_order() if args.decorrelate_moments else None


class _NonConvergence(Exception):
    def __init__(self, message, payload):
        super().__init__(message)
        self.payload = payload


def _resolve_weights(args, dataset: Dataset) -> WeightVector:
    spec = args.weights
    if spec == "uniform":
        return WeightVector.uniform(dataset.n)
    if spec == "gps_normal":
        return gps_normal_weights(dataset)
    if spec == "dcow":
        res = independence_weights(dataset, _solver_config(args), args.dim_adjust, _moments(args))
        if not res.converged:
            raise _NonConvergence(f"solver did not converge in {res.iterations} iterations", res.to_dict())
        return res.weights
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"--weights must be one of {WEIGHT_CHOICES} or an existing file, got {spec!r}")
    w = WeightVector.read_csv(path)
    if w.n != dataset.n:
        raise DataError(f"{spec}: {w.n} weights for {dataset.n} rows")
    return w


def _kernel(args, dataset: Dataset) -> KernelSpec:
    h = default_bandwidth(dataset.exposure) if args.bandwidth == "auto" else args.bandwidth
    return KernelSpec(args.kernel, h)


def _write(path: Optional[str], text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_weights(args) -> int:
    dataset = _load(args)
    res = independence_weights(dataset, _solver_config(args), args.dim_adjust, _moments(args))
    res.weights.write_csv(args.output)
    sys.stdout.write(json.dumps(res.to_dict(), indent=2, sort_keys=True) + "\n")
    for msg in res.warnings:
        logger.warning(msg)
    if not res.converged:
        warn_path = Path(args.output).with_suffix(".warnings.json")
        warn_path.write_text(
            json.dumps(
                {"converged": False, "iterations": res.iterations, "warnings": list(res.warnings)},
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        return _emit_error(
            "non_convergence",
            f"solver did not converge in {res.iterations} iterations; best feasible weights written, see {warn_path}",
            EXIT_NONCONVERGENCE,
        )
    return EXIT_OK


def cmd_balance(args) -> int:
    dataset = _load(args)
    w = _resolve_weights(args, dataset)
    report = balance_table(
        dataset,
        w,
        max_exposure_power=args.max_exposure_power,
        include_interactions=not args.no_interactions,
        max_covariate_power=args.max_covariate_power,
        dim_adjust=args.dim_adjust,
    )
    if args.output:
        Path(args.output).write_text(report.to_json() + "\n")
    sys.stdout.write(report.to_json() + "\n" if args.json else report.render(w.label))
    return EXIT_OK


def cmd_adrf(args) -> int:
    dataset = _load(args)
    w = _resolve_weights(args, dataset)
    grid = default_grid(dataset.exposure, args.grid_size)
    est = adrf_curve(dataset, w, grid, _kernel(args, dataset), args.estimator)
    for msg in est.warnings:
        logger.warning(msg)
    _write(args.output, est.to_csv())
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    try:
        config = BootstrapConfig(args.replications, args.alpha, args.seed, args.max_failures)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dataset = _load(args)
    grid = default_grid(dataset.exposure, args.grid_size)
    point_weights = _resolve_weights(args, dataset)
    est = bootstrap_bands(
        dataset,
        args.weights,
        args.estimator,
        grid,
        _kernel(args, dataset),
        config,
        _solver_config(args),
        args.dim_adjust,
        _moments(args),
        threads=args.threads,
        point_weights=point_weights,
    )
    for msg in est.warnings:
        logger.warning(msg)
    Path(args.output).write_text(est.to_csv())
    Path(args.output).with_suffix(".json").write_text(est.bootstrap.to_json() + "\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise UsageError(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
    try:
        config = DGPConfig(
            n=args.n,
            p_continuous=args.p_continuous,
            p_binary=args.p_binary,
            confounding_strength=args.confounding_strength,
            effect_type=args.effect_type,
            noise_sd=args.noise_sd,
            exposure_family=args.exposure_family,
            seed=args.seed,
            outcome_form=args.outcome_form,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = run_experiment(
        config,
        methods,
        args.replications,
        grid_size=args.grid_size,
        n_jobs=args.threads,
        solver_config=SolverConfig(lam=args.lam, max_iterations=args.max_iterations, seed=args.seed),
        outcome_draws=args.outcome_draws,
    )
    _write(args.output, result.to_csv())
    if args.output:
        Path(args.output).with_suffix(".json").write_text(result.config_json() + "\n")
    else:
        logger.info("config: %s", json.dumps(json.loads(result.config_json()), sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "weights": cmd_weights,
    "balance": cmd_balance,
    "adrf": cmd_adrf,
    "bootstrap": cmd_bootstrap,
    "simulate": cmd_simulate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _emit_error("usage", str(exc), EXIT_USAGE)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return COMMANDS[args.subcommand](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _emit_error("usage", str(exc), EXIT_USAGE)
    except _NonConvergence as exc:
        return _emit_error("non_convergence", str(exc), EXIT_NONCONVERGENCE)
    except BootstrapFailureError as exc:
        return _emit_error("bootstrap_failures", str(exc), EXIT_DATA, failures=exc.failures)
    except (DataError, NoLocalDataError, InfeasibleConstraintsError, OSError) as exc:
        return _emit_error(type(exc).__name__, str(exc), EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
