"""Command line interface: ``otar <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical or
degeneracy error. Errors are also written to stderr as one JSON object.
The environment variable ``WAR_SEED`` overrides ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .dynamics import (
    ChainConfig,
    ModelKind,
    ModelParams,
    SystemKind,
    check_stationarity_condition,
    maps_from_distributions,
    series_to_distributions,
    simulate_chain,
    simulate_distributions,
)
from .errors import (
    ConfigError,
    DegenerateMapError,
    DomainError,
    InputError,
    NotDifferentiableError,
    OtarError,
)
from .estimation import FitConfig, fit, fit_alt
from .experiments import (
    GridSpec,
    builtin_map,
    compare_models,
    run_inverse_inequality_sweep,
    run_rate_experiment,
    run_simulation_grid,
)
from .ingest import EmpiricalSeries, empirical_quantiles, load_samples
from .noise import NoiseSpec
from .storage import (
    CURVE_SERIES,
    MAP_SERIES,
    read_curve_series,
    read_header,
    read_map_series,
    write_curve_series,
    write_fit,
    write_map_series,
)
from .transport import DEFAULT_M, Interval, QuantileCurve, UnitMap

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
SEED_ENV = "WAR_SEED"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# flag helpers
# ---------------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _year_range(text: str) -> tuple[int, int]:
    try:
        a, b = (int(t) for t in text.split("-"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YEAR-YEAR, got {text!r}") from None
    return a, b


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0,
                   help=f"random seed (overridden by ${SEED_ENV})")


def _add_noise(p):
    p.add_argument("--noise", default=None,
                   help="'none' for identity noise, or a NoiseSpec JSON file (default: built-in law)")
    p.add_argument("--noise-k-max", type=int, default=None, help="largest |K| of the noise law")
    p.add_argument("--noise-components", type=int, default=None,
                   help="number of mixture components (equal weights)")
    p.add_argument("--noise-identity-prob", type=float, default=None, help="probability of K = 0")


def _add_model(p, with_s: bool = True):
    p.add_argument("--alpha", type=float, required=True, help="contraction parameter")
    if with_s:
        p.add_argument("--s", default="id",
                       help="map S: id, zeta:K, kinked, steps, mixed, or a map file (.csv/.json)")
    p.add_argument("--system", choices=[k.value for k in SystemKind],
                   default=SystemKind.PERTURB_THEN_MAP.value)
    p.add_argument("--m", type=int, default=DEFAULT_M, help="grid size M")


def _add_fit_cfg(p):
    p.add_argument("--alpha-step", type=float, default=0.01, help="coarse scan step")
    p.add_argument("--alpha-bounds", type=_floats, default=[-0.999, 0.999],
                   help="scan bounds LO,HI")
    p.add_argument("--refine-tol", type=float, default=1e-4, help="golden-section tolerance")
    p.add_argument("--no-endpoints", action="store_true",
                   help="do not evaluate alpha = -1 and 1 exactly")


def _seed(args) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return args.seed
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _noise(args) -> NoiseSpec:
    if args.noise == "none":
        return NoiseSpec.none()
    base = NoiseSpec.from_json(args.noise) if args.noise else NoiseSpec()
    k_max = args.noise_k_max if args.noise_k_max is not None else base.k_max
    comps = args.noise_components
    weights = base.weights if comps is None else tuple([1.0 / comps] * comps)
    comps = comps if comps is not None else base.n_components
    prob = (args.noise_identity_prob if args.noise_identity_prob is not None
            else base.include_identity_prob)
    return NoiseSpec(k_max=k_max, n_components=comps, weights=weights, include_identity_prob=prob)


def _map(name: str, m: int) -> UnitMap:
    path = Path(name)
    if path.suffix in (".csv", ".json"):
        if not path.is_file():
            raise InputError(f"no such map file: {path}")
        mp = UnitMap.from_csv(path) if path.suffix == ".csv" else UnitMap.from_json(path)
        if mp.m != m:
            raise ConfigError(f"map file has M = {mp.m} but --m is {m}")
        return mp
    return builtin_map(name, m)


def _params(args) -> ModelParams:
    return ModelParams(args.alpha, _map(args.s, args.m), SystemKind(args.system))


def _fit_cfg(args) -> FitConfig:
    if len(args.alpha_bounds) != 2:
        raise ConfigError("--alpha-bounds needs exactly two numbers")
    return FitConfig(alpha_grid_step=args.alpha_step, alpha_bounds=tuple(args.alpha_bounds),
                     refine_tol=args.refine_tol, include_endpoints=not args.no_endpoints)


def _kind(name: str, reference: str | None, m: int) -> ModelKind:
    if name == "increment":
        return ModelKind.increment()
    if name == "uniform-quantile":
        return ModelKind.uniform_quantile()
    if reference is None:
        raise ConfigError("--reference is required for the generalized-quantile model")
    return ModelKind.generalized_quantile(QuantileCurve(Interval.unit(), _map(reference, m)))


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> None:
    params = _params(args)
    cfg = ChainConfig(args.steps, args.burn_in, seed=_seed(args), stream=(args.stream,))
    spec = _noise(args)
    if args.distributions:
        kind = _kind(args.distributions, args.reference, args.m)
        init_q = QuantileCurve(Interval.unit(), _map(args.init, args.m))
        series, curves = simulate_distributions(params, cfg, spec, kind, init_q)
        curve_out = write_curve_series(
            EmpiricalSeries(tuple(range(len(curves))), tuple(curves), curves[0].domain),
            f"{args.out}_curves")
    else:
        series, curve_out = simulate_chain(params, cfg, spec), None
    out = write_map_series(series, args.out)
    _emit({"series": str(out), "curves": str(curve_out) if curve_out else None,
           "n": len(series), "m": series.m})


def _load_maps(path, model: str | None, reference: str | None):
    header = read_header(path)
    if header["format"] == MAP_SERIES:
        return read_map_series(path)
    if header["format"] == CURVE_SERIES:
        if model is None:
            raise ConfigError("--model is required when the input is a curve series")
        curves = read_curve_series(path)
        return curves.maps(_kind(model, reference, curves.m))
    raise InputError(f"cannot fit a {header['format']!r} container")


def cmd_fit(args) -> None:
    series = _load_maps(args.input, args.model, args.reference)
    cfg = _fit_cfg(args)
    system = SystemKind(args.system)
    result = fit_alt(series, cfg) if system is SystemKind.CONTRACT_ABOUT else fit(series, cfg)
    out = write_fit(result, args.out)
    _emit({"fit": str(out), **result.to_dict()})


def cmd_transform(args) -> None:
    header = read_header(args.input)
    if header["format"] == CURVE_SERIES:
        curves = read_curve_series(args.input)
        series = maps_from_distributions(curves.curves, _kind(args.model, args.reference, curves.m))
        out = write_map_series(series, args.out)
        _emit({"series": str(out), "n": len(series)})
    elif header["format"] == MAP_SERIES:
        series = read_map_series(args.input)
        kind = _kind(args.model, args.reference, series.m)
        init_q = QuantileCurve(Interval.unit(), _map(args.init, series.m))
        curves = series_to_distributions(series, kind, init_q)
        out = write_curve_series(
            EmpiricalSeries(tuple(range(len(curves))), tuple(curves), curves[0].domain), args.out)
        _emit({"curves": str(out), "n": len(curves)})
    else:
        raise InputError(f"cannot transform a {header['format']!r} container")


def cmd_ingest(args) -> None:
    table = load_samples(args.input, args.value_col, period_col=args.period_col,
                         date_col=args.date_col, months=args.months, years=args.years,
                         delimiter=args.delimiter)
    domain = None
    if args.domain is not None:
        if len(args.domain) != 2:
            raise ConfigError("--domain needs exactly two numbers")
        domain = Interval(*args.domain)
    series = empirical_quantiles(table, args.m, domain)
    out = write_curve_series(series, args.out)
    _emit({"curves": str(out), "periods": len(series), "n_dropped": table.n_dropped,
           "domain": [series.domain.lo, series.domain.hi],
           "flags": {str(k): v for k, v in series.flags.items()}})


def cmd_check(args) -> None:
    _emit(check_stationarity_condition(_params(args), _noise(args)).to_dict())


def cmd_grid(args) -> None:
    maps = {name: _map(name, args.m) for name in args.s_names.split(",") if name.strip()}
    spec = GridSpec(alphas=tuple(args.alphas), s_choices=maps, n_steps=args.steps,
                    burn_in=args.burn_in, replicates=args.replicates, seed=_seed(args),
                    noise=_noise(args), system=SystemKind(args.system), fit_cfg=_fit_cfg(args))
    report = run_simulation_grid(spec, threads=args.threads)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    report.to_json(f"{args.out}.json")
    report.to_csv(f"{args.out}.csv")
    _emit({"report": f"{args.out}.json", "table": f"{args.out}.csv", "cells": report.cells})


def cmd_rate(args) -> None:
    report = run_rate_experiment(args.ns, args.replicates, _params(args), _noise(args),
                                 seed=_seed(args), burn_in=args.burn_in, fit_cfg=_fit_cfg(args),
                                 threads=args.threads)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    report.to_json(f"{args.out}.json")
    report.to_csv(f"{args.out}.csv")
    summary = report.to_dict()
    summary.pop("records")
    _emit(summary)


def cmd_compare(args) -> None:
    header = read_header(args.input)
    if header["format"] != CURVE_SERIES:
        raise InputError("compare needs a curve-series container")
    report = compare_models(read_curve_series(args.input), _fit_cfg(args))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(f"{args.out}.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    _emit(report.to_dict())


def cmd_sweep(args) -> None:
    if len(args.band) != 2:
        raise ConfigError("--band needs exactly two numbers")
    report = run_inverse_inequality_sweep(args.pairs, tuple(args.band), seed=_seed(args), m=args.m)
    summary = report.to_dict()
    summary.pop("rows")
    _emit(summary)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for grid and rate runs (default: all cores)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a map chain")
    _add_model(p)
    _add_seed(p)
    _add_noise(p)
    p.add_argument("--steps", type=int, default=300, help="total iterations")
    p.add_argument("--burn-in", type=int, default=100, help="iterations discarded first")
    p.add_argument("--stream", type=int, default=0, help="substream key under the seed")
    p.add_argument("--distributions", choices=["increment", "uniform-quantile", "generalized-quantile"],
                   help="also write the induced distribution series")
    p.add_argument("--reference", help="reference quantile map for generalized-quantile")
    p.add_argument("--init", default="id", help="initial quantile map for the increment model")
    p.add_argument("--out", required=True, help="output stem (writes STEM.json and STEM.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit (alpha, S) to a series")
    p.add_argument("--input", required=True, help="map-series or curve-series header")
    p.add_argument("--model", choices=["increment", "uniform-quantile", "generalized-quantile"],
                   help="reading of a curve series")
    p.add_argument("--reference", help="reference quantile map for generalized-quantile")
    p.add_argument("--system", choices=[k.value for k in SystemKind],
                   default=SystemKind.PERTURB_THEN_MAP.value)
    _add_fit_cfg(p)
    p.add_argument("--out", required=True, help="output stem for the fit files")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("transform", help="convert between curve and map series")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True,
                   choices=["increment", "uniform-quantile", "generalized-quantile"])
    p.add_argument("--reference", help="reference quantile map for generalized-quantile")
    p.add_argument("--init", default="id", help="initial quantile map for the increment model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("ingest", help="turn raw samples into a curve series")
    p.add_argument("--input", required=True, help="delimited text file")
    p.add_argument("--value-col", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--period-col")
    group.add_argument("--date-col", help="ISO dates; the period is the year")
    p.add_argument("--months", type=_ints, help="keep only these months, e.g. 6,7,8,9")
    p.add_argument("--years", type=_year_range, help="inclusive year range, e.g. 1960-2020")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--domain", type=_floats, help="common domain LO,HI (default: padded range)")
    p.add_argument("--m", type=int, default=DEFAULT_M)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("check", help="stationarity sufficient condition")
    _add_model(p)
    _add_noise(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("grid", help="simulation grid over alpha and S")
    p.add_argument("--alphas", type=_floats, default=[-0.9, -0.5, 0.0, 0.5, 0.9])
    p.add_argument("--s-names", default="zeta:-6,zeta:-4,zeta:-2,mixed,kinked,steps")
    p.add_argument("--system", choices=[k.value for k in SystemKind],
                   default=SystemKind.PERTURB_THEN_MAP.value)
    p.add_argument("--m", type=int, default=DEFAULT_M)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--replicates", type=int, default=20)
    _add_seed(p)
    _add_noise(p)
    _add_fit_cfg(p)
    p.add_argument("--out", required=True, help="output stem (STEM.json, STEM.csv)")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("rate", help="convergence rate study")
    _add_model(p)
    _add_seed(p)
    _add_noise(p)
    _add_fit_cfg(p)
    p.add_argument("--ns", type=_ints, default=[250, 1000, 4000])
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("compare", help="increment vs quantile model comparison")
    p.add_argument("--input", required=True, help="curve-series header")
    _add_fit_cfg(p)
    p.add_argument("--out", help="optional output stem")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="inverse-norm inequality sweep")
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--band", type=_floats, default=[0.5, 2.0])
    p.add_argument("--m", type=int, default=DEFAULT_M)
    _add_seed(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        args.func(args)
    except _UsageError as exc:
        return _fail(EXIT_CONFIG, "UsageError", str(exc))
    except (ConfigError, InputError, DomainError) as exc:
        return _fail(EXIT_CONFIG, type(exc).__name__, str(exc))
    except (DegenerateMapError, NotDifferentiableError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
    except OtarError as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
