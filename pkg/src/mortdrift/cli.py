"""Command-line front end: ``fit``, ``project``, ``simulate``, ``expectancy``.

Settings come from, in increasing precedence: built-in defaults, an INI
config file (``--config``; section ``[run]`` plus a section named after the
command), and command-line flags.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .errors import DegenerateError, ValidationError
from .leecarter import fit_lee_carter, load_params, save_params
from .surface import DEFAULT_OMEGA_MAX, MortalitySurface, load_surface, save_surface
from .trend import (
    SurfaceVariant,
    TrendFit,
    build_surface,
    fan_chart,
    fit_trend,
    lee_carter_extrapolation,
    load_trend,
    project_kappa,
    save_trend,
    scenario_for_index,
    sigma_t_sq_coefficients,
    trend_to_dict,
    write_fan_chart,
)
from .valuation import (
    Mode,
    ValuationConfig,
    decompose,
    drift_gap,
    expectancy_drift,
    expectancy_series,
    histogram,
    load_portfolio,
    omega_n,
    run_valuation,
    save_portfolio,
    write_histogram,
)

log = logging.getLogger("mortdrift")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4
EXIT_DEGENERATE = 5


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# settings resolution


def _int_list(text: str) -> list[int]:
    return [int(x) for x in str(text).replace(" ", "").split(",") if x]


class Settings:
    """Flags > config file > defaults, with per-key type conversion."""

    def __init__(self, args: argparse.Namespace, command: str):
        self.args = args
        self.file: dict[str, str] = {}
        self.base = Path.cwd()
        if args.config is not None:
            path = Path(args.config)
            parser = configparser.ConfigParser()
            try:
                with open(path, encoding="utf-8") as fh:
                    parser.read_file(fh)
            except configparser.Error as exc:
                raise UsageError(f"{path}: unreadable config: {exc}") from None
            for section in ("run", command):
                if parser.has_section(section):
                    self.file.update(parser.items(section))
            self.base = path.resolve().parent

    def get(self, key: str, convert: Callable[[str], Any], default: Any = None) -> Any:
        value = getattr(self.args, key, None)
        if value is not None:
            return value
        if key in self.file:
            try:
                return convert(self.file[key])
            except ValueError:
                raise UsageError(f"config key {key!r}: bad value {self.file[key]!r}") from None
        return default

    def path(self, key: str, required: bool = True) -> Path | None:
        value = getattr(self.args, key, None)
        if value is not None:
            return Path(value)
        if key in self.file:
            p = Path(self.file[key])
            return p if p.is_absolute() else self.base / p
        if required:
            raise UsageError(f"missing required setting {key!r}")
        return None


def _read_text(path: Path):
    return open(path, encoding="utf-8", newline="")


def _write_text(path: Path):
    return open(path, "w", encoding="utf-8", newline="")


def _dump_json(data: dict, path: Path) -> None:
    with _write_text(path) as fh:
        json.dump(_jsonable(data), fh, indent=2)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return None if math.isnan(value) or math.isinf(value) else value
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _out_dir(settings: Settings) -> Path:
    out = settings.path("out_dir", required=False) or Path("out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(settings: Settings):
    with _read_text(settings.path("params")) as fh:
        params = load_params(fh)
    with _read_text(settings.path("trend")) as fh:
        fit = load_trend(fh)
    return params, fit


# ---------------------------------------------------------------------------
# commands


def fit_report(params, fit: TrendFit) -> dict:
    c2, c1, c0 = sigma_t_sq_coefficients(fit)
    cov = fit.cov
    return {
        "lee_carter": {
            "ages": [int(params.ages[0]), int(params.ages[-1])],
            "years": [int(params.years[0]), int(params.years[-1])],
            "sigma_eps": params.sigma_eps,
            "degenerate": params.degenerate,
        },
        "trend": trend_to_dict(fit),
        "T": fit.T,
        "cov": cov.tolist(),
        "se_a": math.sqrt(cov[0, 0]),
        "se_b": math.sqrt(cov[1, 1]),
        "sigma_t_sq_tau": {"tau2": c2, "tau1": c1, "const": c0},
    }


def cmd_fit(args: argparse.Namespace) -> int:
    settings = Settings(args, "fit")
    surface_path = settings.path("surface")
    with _read_text(surface_path) as fh:
        surface = load_surface(fh)
    params = fit_lee_carter(surface)
    if params.degenerate:
        log.warning("surface is constant in time; the period index is identically zero")
    fit = fit_trend(params.kappa, params.years)
    out = _out_dir(settings)
    with _write_text(out / "params.json") as fh:
        save_params(params, fh)
    with _write_text(out / "trend.json") as fh:
        save_trend(fit, fh)
    report = fit_report(params, fit)
    report["source"] = surface_path.name
    _dump_json(report, out / "fit_report.json")
    c2, c1, c0 = sigma_t_sq_coefficients(fit)
    print(f"a_hat={fit.a_hat:.6g} b_hat={fit.b_hat:.6g} sigma_gamma={fit.sigma_gamma:.9g}")
    print(f"sigma_t^2 = {c0:.8g} + {c2:.8g} tau^2 + {c1:.8g} tau")
    return EXIT_OK


def cmd_project(args: argparse.Namespace) -> int:
    settings = Settings(args, "project")
    params, fit = _load_model(settings)
    horizon = settings.get("horizon", int, fit.t_M + 50)
    level = settings.get("level", float, 0.95)
    n_paths = settings.get("n_paths", int, 0)
    n_surfaces = settings.get("sample_surfaces", int, 0)
    seed = settings.get("seed", int, 0)
    variant = SurfaceVariant(settings.get("variant", str, SurfaceVariant.RAW.value))
    if horizon <= fit.t_M:
        raise ValidationError(f"horizon {horizon} must exceed the last fitted year {fit.t_M}")
    out = _out_dir(settings)

    with _write_text(out / "fan_chart.csv") as fh:
        write_fan_chart(fan_chart(fit, horizon, level), fh)

    years = np.arange(fit.t_M + 1, horizon + 1)
    tau = fit.tau(years)
    if n_paths:
        with _write_text(out / "k_paths.csv") as fh:
            fh.write("path,tau,year,k\n")
            for i in range(n_paths):
                k = project_kappa(scenario_for_index(fit, seed, i), tau)
                for tt, y, kk in zip(tau, years, k):
                    fh.write(f"{i},{tt},{y},{float(kk)!r}\n")
    for i in range(n_surfaces):
        scenario = None if variant is SurfaceVariant.MEAN_REFERENCE else scenario_for_index(
            fit, seed, i)
        surf = build_surface(params, fit, scenario, variant, horizon)
        with _write_text(out / f"surface_{variant.value}_{i}.csv") as fh:
            save_surface(surf, fh)
        if scenario is None:
            break
    _dump_json(
        {"seed": seed, "horizon": horizon, "level": level, "variant": variant.value,
         "n_paths": n_paths, "sample_surfaces": n_surfaces},
        out / "project_manifest.json",
    )
    return EXIT_OK


def _valuation_run(config: ValuationConfig, params, fit, portfolio, bins: int, out: Path,
                   tag: str) -> tuple[dict, Any]:
    result = run_valuation(config, params, fit, portfolio)
    with _write_text(out / f"histogram_{tag}.csv") as fh:
        write_histogram(histogram(result.samples, bins), fh)
    summary = result.to_dict()
    if config.mode is Mode.STOCHASTIC and config.n_scenarios >= 2 and config.n_inner >= 2:
        try:
            d = decompose(result)
            summary["decomposition"] = {"between": d.between, "within": d.within,
                                        "omega": d.omega}
        except DegenerateError:
            summary["decomposition"] = None
    return summary, result


def cmd_simulate(args: argparse.Namespace) -> int:
    settings = Settings(args, "simulate")
    with _read_text(settings.path("surface")) as fh:
        surface = load_surface(fh)
    with _read_text(settings.path("portfolio")) as fh:
        portfolio = load_portfolio(fh)
    params = fit_lee_carter(surface)
    fit = fit_trend(params.kappa, params.years)

    mode = settings.get("mode", str, "both").lower()
    if mode not in ("deterministic", "stochastic", "both"):
        raise UsageError(f"unknown mode {mode!r}")
    n_scenarios = settings.get("n_scenarios", int, 200)
    n_inner = settings.get("n_inner", int, 100)
    replications = settings.get("replication", _int_list, [1])
    if isinstance(replications, int):
        replications = [replications]
    bins = settings.get("histogram_bins", int, 50)
    common = dict(
        discount_rate=settings.get("discount_rate", float, 0.025),
        seed=settings.get("seed", int, 0),
        omega_max=settings.get("omega_max", int, DEFAULT_OMEGA_MAX),
        valuation_year=settings.get("valuation_year", int, None),
        workers=settings.get("workers", int, 1),
    )
    variant = settings.get("variant", str, SurfaceVariant.RAW.value)
    out = _out_dir(settings)

    runs: dict[str, dict] = {}
    results: dict[tuple[str, int], Any] = {}
    echo = None
    for n in replications:
        if mode in ("deterministic", "both"):
            cfg = ValuationConfig(mode=Mode.DETERMINISTIC, n_scenarios=1,
                                  n_inner=n_scenarios * n_inner, replication=n, **common)
            runs[f"deterministic_n{n}"], results[("det", n)] = _valuation_run(
                cfg, params, fit, portfolio, bins, out, f"deterministic_n{n}")
            echo = cfg
        if mode in ("stochastic", "both"):
            cfg = ValuationConfig(mode=Mode.STOCHASTIC, n_scenarios=n_scenarios,
                                  n_inner=n_inner, replication=n, variant=variant, **common)
            runs[f"stochastic_n{n}"], results[("sto", n)] = _valuation_run(
                cfg, params, fit, portfolio, bins, out, f"stochastic_n{n}")
            echo = cfg

    config_echo = echo.to_dict()
    config_echo.update(mode=mode, replication=replications, n_scenarios=n_scenarios,
                       n_inner=n_inner)
    report: dict[str, Any] = {
        "seed": common["seed"],
        "config": config_echo,
        "portfolio": portfolio.summary(),
        "trend": trend_to_dict(fit),
        "runs": runs,
    }
    if mode == "both":
        comparison = {}
        for n in replications:
            det, sto = results[("det", n)], results[("sto", n)]
            comparison[f"n{n}"] = {
                "cv_deterministic": det.cv,
                "cv_stochastic": sto.cv,
                "cv_ratio": sto.cv / det.cv if det.cv else None,
                "q75_deterministic": det.quantiles[0.75],
                "q75_stochastic": sto.quantiles[0.75],
                "q75_uplift": sto.quantiles[0.75] / det.quantiles[0.75] - 1.0,
            }
        report["comparison"] = comparison
    if mode in ("stochastic", "both"):
        report["omega_table"] = _omega_table(runs, replications)
    _dump_json(report, out / "result.json")
    for key, run in runs.items():
        print(f"{key}: mean={run['mean']:.6g} std={run['std']:.6g} cv={run['cv']}")
    return EXIT_OK


def _omega_table(runs: dict, replications: list[int]) -> list[dict]:
    base = runs.get("stochastic_n1", {}).get("decomposition")
    omega_1 = base["omega"] if base else None
    table = []
    for n in replications:
        d = runs[f"stochastic_n{n}"].get("decomposition")
        predicted = omega_n(omega_1, n) if omega_1 else None
        table.append({"n": n, "omega_measured": d["omega"] if d else None,
                      "omega_predicted": predicted})
    return table


def _expectancy_surface(settings: Settings, prefix: str, horizon: int,
                        surface_basis: str) -> MortalitySurface | None:
    surface_path = settings.path(f"{prefix}surface", required=False)
    if surface_path is not None:
        with _read_text(surface_path) as fh:
            return load_surface(fh)
    params_path = settings.path(f"{prefix}params", required=False)
    trend_path = settings.path(f"{prefix}trend", required=False)
    if params_path is None and trend_path is None:
        return None
    if params_path is None or trend_path is None:
        raise UsageError(f"--{prefix}params and --{prefix}trend go together")
    with _read_text(params_path) as fh:
        params = load_params(fh)
    with _read_text(trend_path) as fh:
        fit = load_trend(fh)
    horizon = max(horizon, fit.t_M + 1)
    if surface_basis == "lee_carter":
        return lee_carter_extrapolation(params, fit, horizon)
    return build_surface(params, fit, None, SurfaceVariant.MEAN_REFERENCE, horizon)


def cmd_expectancy(args: argparse.Namespace) -> int:
    settings = Settings(args, "expectancy")
    age = settings.get("age", int, 60)
    generations = settings.get("generations", _parse_range, None)
    if generations is None:
        raise UsageError("missing required setting 'generations' (e.g. 1930:1960)")
    omega_max = settings.get("omega_max", int, DEFAULT_OMEGA_MAX)
    basis = settings.get("basis", str, "mean_reference")
    horizon = max(generations) + omega_max
    surface = _expectancy_surface(settings, "", horizon, basis)
    if surface is None:
        raise UsageError("give either --surface or --params with --trend")
    other = _expectancy_surface(settings, "compare_", horizon, basis)
    out = _out_dir(settings)

    report: dict[str, Any] = {"age": age, "generations": [min(generations), max(generations)]}
    with _write_text(out / "expectancy.csv") as fh:
        fh.write("generation,e_x\n")
        for g, e in expectancy_series(surface, age, generations, omega_max):
            fh.write(f"{g},{e!r}\n")
    report["drift_months_per_year"] = expectancy_drift(surface, age, generations, omega_max)
    if other is not None:
        with _write_text(out / "expectancy_compare.csv") as fh:
            fh.write("generation,e_x\n")
            for g, e in expectancy_series(other, age, generations, omega_max):
                fh.write(f"{g},{e!r}\n")
        d_other = expectancy_drift(other, age, generations, omega_max)
        report["compare_drift_months_per_year"] = d_other
        report["gap"] = drift_gap(report["drift_months_per_year"], d_other)
    _dump_json(report, out / "expectancy.json")
    print(f"drift at age {age}: {report['drift_months_per_year']:.4f} months/year")
    return EXIT_OK


def _parse_range(text: str) -> list[int]:
    text = str(text)
    if ":" in text:
        lo, hi = (int(x) for x in text.split(":"))
        return list(range(lo, hi + 1))
    return _int_list(text)


def cmd_synth(args: argparse.Namespace) -> int:
    from .synthetic import reference_portfolio, synthetic_surface

    settings = Settings(args, "synth")
    out = _out_dir(settings)
    seed = settings.get("seed", int, 2007)
    with _write_text(out / "surface.csv") as fh:
        save_surface(synthetic_surface(seed=seed), fh)
    with _write_text(out / "portfolio.csv") as fh:
        save_portfolio(reference_portfolio(), fh)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [run] and per-command sections")
    common.add_argument("--out-dir", dest="out_dir", help="output directory (default ./out)")
    common.add_argument("--seed", type=int, help="64-bit master seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mortdrift", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit Lee-Carter and the affine trend")
    p.add_argument("surface", nargs="?", help="surface CSV (age,year,mu)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("project", parents=[common], help="trend corridor and sampled paths")
    p.add_argument("--params")
    p.add_argument("--trend")
    p.add_argument("--horizon", type=int, help="last projected calendar year")
    p.add_argument("--level", type=float, help="corridor confidence level (default 0.95)")
    p.add_argument("--n-paths", dest="n_paths", type=int)
    p.add_argument("--sample-surfaces", dest="sample_surfaces", type=int)
    p.add_argument("--variant", choices=[v.value for v in SurfaceVariant])
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo liability valuation")
    p.add_argument("config_file", nargs="?", help="same as --config")
    p.add_argument("--surface")
    p.add_argument("--portfolio")
    p.add_argument("--mode", choices=["deterministic", "stochastic", "both"])
    p.add_argument("--n-scenarios", dest="n_scenarios", type=int)
    p.add_argument("--n-inner", dest="n_inner", type=int)
    p.add_argument("--replication", type=_int_list, help="comma-separated list, e.g. 1,10,30")
    p.add_argument("--discount-rate", dest="discount_rate", type=float)
    p.add_argument("--omega-max", dest="omega_max", type=int)
    p.add_argument("--valuation-year", dest="valuation_year", type=int)
    p.add_argument("--variant", choices=[SurfaceVariant.RAW.value,
                                         SurfaceVariant.BIAS_CORRECTED.value])
    p.add_argument("--workers", type=int)
    p.add_argument("--histogram-bins", dest="histogram_bins", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("expectancy", parents=[common], help="cohort life expectancy drift")
    p.add_argument("--params")
    p.add_argument("--trend")
    p.add_argument("--surface")
    p.add_argument("--compare-params", dest="compare_params")
    p.add_argument("--compare-trend", dest="compare_trend")
    p.add_argument("--compare-surface", dest="compare_surface")
    p.add_argument("--age", type=int)
    p.add_argument("--generations", type=_parse_range, help="first:last or comma list")
    p.add_argument("--omega-max", dest="omega_max", type=int)
    p.add_argument("--basis", choices=["mean_reference", "lee_carter"])
    p.set_defaults(func=cmd_expectancy)

    p = sub.add_parser("synth", parents=[common], help="write synthetic demo inputs")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s | %(message)s")
    if getattr(args, "config_file", None) and args.config is None:
        args.config = args.config_file
    if args.command == "fit" and args.surface is None and args.config is None:
        parser.error("fit needs a surface path")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        print(f"I/O error: {name}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except DegenerateError as exc:
        print(f"numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ValidationError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
