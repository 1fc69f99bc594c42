"""Command-line pipeline: decluster -> fit -> intensity -> extrapolate -> validate, plus predict/simulate.

Every run writes ``config.json`` (the fully resolved arguments) next to its
outputs; ``stormhazard replay <config.json>`` reruns it. Exit status is 0 on
success, 1 on a data or validation error, 2 on a usage error. Diagnostics go
to standard error only.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, TextIO

import numpy as np

from . import __version__
from .decluster import DeclusterConfig, Storm, decluster, max_multiplicity_stats, write_catalog
from .hazard import (
    ConvergenceError,
    HazardFit,
    P400Estimate,
    count_by_cycle,
    estimate_p400,
    fit_beta,
    warp_catalog,
)
from .ingest import LEGAL_AP_VALUES, Dataset, IngestError, _parse_date, format_instant, historical_cycles_path, load_dataset
from .kernel import KernelConfig, estimate_lambda0, ongoing_correction, to_per_year
from .risk import chi_square_independence, extrapolate, frequency_table, predict_cycle

CONFIG_NAME = "config.json"
SEED_ENV = "STORMHAZARD_SEED"
DEFAULT_EXTREME = {"level": 400, "gradient": 100}
DEFAULT_LOW = {"level": 111, "gradient": 35}


class UsageError(Exception):
    pass


# --- serialisation -----------------------------------------------------------

def fmt(x) -> str:
    """Shortest text that reads back to the same float."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def to_json(obj, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return "null" if not math.isfinite(obj) else format(float(obj), ".17g")
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{to_json(str(k))}: {to_json(v, indent + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


@dataclass
class Output:
    """Writes into one directory; ``-`` sends primary tables to stdout and drops sidecars."""

    root: str

    @property
    def to_stdout(self) -> bool:
        return self.root == "-"

    def prepare(self) -> None:
        if not self.to_stdout:
            Path(self.root).mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str, primary: bool = False) -> None:
        if self.to_stdout:
            if primary:
                sys.stdout.write(text)
            return
        target = Path(self.root) / name
        if target.resolve().parent != Path(self.root).resolve():
            raise UsageError(f"refusing to write outside the output directory: {name}")
        with target.open("w", encoding="utf-8", newline="") as handle:
            handle.write(text)

    def table(self, name: str, header, rows, primary: bool = False) -> None:
        from io import StringIO
        buf = StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([r if isinstance(r, str) else fmt(r) for r in row])
        self.write(name, buf.getvalue(), primary)


# --- pipeline stages ---------------------------------------------------------

@dataclass
class LevelRun:
    low_level: int
    storms: list[Storm]
    fit: HazardFit | None = None
    p400: P400Estimate | None = None


def _load(args) -> Dataset:
    return load_dataset(args.ap, args.cycles, "lenient" if args.lenient else "strict")


def _decluster(args, data: Dataset, low: int) -> list[Storm]:
    config = DeclusterConfig(low, args.run_length, args.strength)
    return decluster(data.series, data.cycles, config)


def _fit(args, data: Dataset, storms: list[Storm]) -> tuple[HazardFit, P400Estimate]:
    counts = count_by_cycle(storms, data.cycles)
    fit = fit_beta(counts, tol=args.tol, max_iter=args.max_iter)
    return fit, estimate_p400(storms, args.extreme_level)


def _fit_report(fit: HazardFit, p400: P400Estimate, low: int) -> dict:
    return {
        "beta_hat": fit.beta_hat,
        "beta_ci_low": fit.beta_ci[0],
        "beta_ci_high": fit.beta_ci[1],
        "alpha_hat": fit.alpha_hat,
        "lrt_pvalue": fit.lrt_pvalue,
        "p400_hat": p400.p_hat,
        "p400_ci_low": p400.ci[0],
        "p400_ci_high": p400.ci[1],
        "m": p400.m,
        "converged": fit.converged,
        "residual": fit.residual,
        "low_level": low,
    }


def _curve(args, data: Dataset, run: LevelRun):
    counts = count_by_cycle(run.storms, data.cycles)
    warped = warp_catalog(run.storms, data.cycles)
    h = "auto" if args.bandwidth == "auto" else float(args.bandwidth)
    config = KernelConfig(h=h, grid_size=args.grid_size)
    curve = estimate_lambda0(warped, counts, config, run.fit)
    return to_per_year(curve, 0.0, run.fit), warped


def _risk(args, data: Dataset, run: LevelRun, curve):
    stats = max_multiplicity_stats(run.storms, args.extreme_level)
    corrected = ongoing_correction(curve, stats)
    return extrapolate(corrected, run.p400, data.cycle_years)


def _iter_runs(args, data: Dataset, need_fit: bool = True) -> Iterator[LevelRun]:
    for low in args.low_level:
        run = LevelRun(low, _decluster(args, data, low))
        if need_fit:
            run.fit, run.p400 = _fit(args, data, run.storms)
        yield run


def _write_catalog(out: Output, run: LevelRun, primary: bool) -> None:
    from io import StringIO
    buf = StringIO()
    write_catalog(run.storms, buf)
    out.write(f"storms_{run.low_level}.csv", buf.getvalue(), primary)


def _write_curve(out: Output, curve, low: int) -> None:
    out.table(f"intensity_{low}.csv", ("t", "lambda", "ci_low", "ci_high"),
              zip(curve.grid, curve.values, curve.ci_low, curve.ci_high), primary=True)
    out.write(f"intensity_{low}.json", to_json({
        "h": curve.h, "K": curve.K, "corrected": curve.corrected, "unit": curve.unit, "low_level": low,
    }) + "\n")


def _write_risk(out: Output, risk, low: int, primary: bool = True) -> None:
    out.table(f"risk_{low}.csv", ("t", "intensity", "ci_low", "ci_high"),
              zip(risk.grid, risk.values, risk.ci_low, risk.ci_high), primary=primary)
    out.write(f"risk_{low}.json", to_json({
        "p400": risk.p400.p_hat,
        "p400_ci_low": risk.p400.ci[0],
        "p400_ci_high": risk.p400.ci[1],
        "empirical_frequency": risk.empirical_frequency,
        "correction_factor": risk.base.correction_factor,
        "h": risk.base.h,
        "low_level": low,
    }) + "\n")


def _thresholds(args, risk) -> list[float]:
    return list(args.threshold) if args.threshold else [risk.empirical_frequency]


def _write_validation(out: Output, args, warped, risk, low: int, primary: bool) -> None:
    for thr in _thresholds(args, risk):
        res = chi_square_independence(warped, risk, thr, args.extreme_level)
        out.write(f"chisq_{low}_{thr:g}.json", to_json(res.as_dict()) + "\n", primary)


# --- commands ------------------------------------------------------------------

def cmd_decluster(args, out: Output) -> None:
    data = _load(args)
    for run in _iter_runs(args, data, need_fit=False):
        _write_catalog(out, run, primary=True)


def cmd_fit(args, out: Output) -> None:
    data = _load(args)
    for run in _iter_runs(args, data):
        out.write(f"fit_{run.low_level}.json", to_json(_fit_report(run.fit, run.p400, run.low_level)) + "\n",
                  primary=True)


def cmd_intensity(args, out: Output) -> None:
    data = _load(args)
    for run in _iter_runs(args, data):
        curve, _ = _curve(args, data, run)
        _write_curve(out, curve, run.low_level)


def cmd_extrapolate(args, out: Output) -> None:
    data = _load(args)
    for run in _iter_runs(args, data):
        curve, _ = _curve(args, data, run)
        _write_risk(out, _risk(args, data, run, curve), run.low_level)


def cmd_validate(args, out: Output) -> None:
    data = _load(args)
    for run in _iter_runs(args, data):
        curve, warped = _curve(args, data, run)
        risk = _risk(args, data, run, curve)
        _write_validation(out, args, warped, risk, run.low_level, primary=True)


def cmd_predict(args, out: Output) -> None:
    data = _load(args)
    for run in _iter_runs(args, data):
        curve, _ = _curve(args, data, run)
        risk = _risk(args, data, run, curve)
        pred = predict_cycle(run.fit, risk, _parse_date(args.start), args.duration_years,
                             args.ssn_max, data.centering_constant)
        out.table(f"prediction_{run.low_level}.csv", ("date", "intensity", "ci_low", "ci_high"),
                  ((format_instant(d), v, lo, hi)
                   for d, v, lo, hi in zip(pred.dates, pred.values, pred.ci_low, pred.ci_high)),
                  primary=True)
        out.write(f"prediction_{run.low_level}.json", to_json({
            "start": format_instant(pred.start),
            "predicted_end": format_instant(pred.predicted_end),
            "ssn_max": pred.predicted_ssn_max,
            "covariate": pred.covariate,
            "centering": data.centering_constant,
            "relative_risk": math.exp(run.fit.beta_hat * pred.covariate),
            "low_level": run.low_level,
        }) + "\n")


def cmd_pipeline(args, out: Output) -> None:
    data = _load(args)
    for run in _iter_runs(args, data):
        low = run.low_level
        _write_catalog(out, run, primary=False)
        out.write(f"fit_{low}.json", to_json(_fit_report(run.fit, run.p400, low)) + "\n")
        curve, warped = _curve(args, data, run)
        _write_curve(out, curve, low)
        risk = _risk(args, data, run, curve)
        _write_risk(out, risk, low, primary=False)
        _write_validation(out, args, warped, risk, low, primary=False)
        rows = frequency_table(run.storms, data.cycle_years, data.observations_in_cycles(),
                               levels=sorted(v for v in LEGAL_AP_VALUES if v >= low)
                               if args.strength == "level" else None)
        out.table(f"frequency_{low}.csv", ("level", "count", "per_observation", "per_year"),
                  ((r.level, r.count, r.per_observation, r.per_year) for r in rows))


def cmd_simulate(args, out: Output) -> None:
    from .ingest import center_covariates, parse_cycles
    from .simulate import ClusterProfile, SimSpec, historical_like_lambda0, make_rng, simulate_events, simulate_series

    cycles, _ = center_covariates(parse_cycles(args.cycles))
    low = args.low_level[0]
    probs = {low: 1.0 - args.p_extreme, args.extreme_level: args.p_extreme} if args.p_extreme > 0 else {low: 1.0}
    spec = SimSpec(historical_like_lambda0(args.alpha, args.contrast), cycles, args.beta, args.seed,
                   emit=args.emit, strength_probs=probs)
    if args.emit == "series":
        rng = make_rng(args.seed)
        sim = simulate_series(spec, ClusterProfile(shoulder=low), args.run_length, rng, on_conflict="drop")
        n_events = sum(len(p) for p in simulate_events(spec, make_rng(args.seed)))
        if n_events > len(sim.storms):
            print(f"WARN: simulate: {n_events - len(sim.storms)} event(s) too close to a neighbour were not painted",
                  file=sys.stderr)
        from io import StringIO
        from .ingest import write_ap_series
        buf = StringIO()
        write_ap_series(sim.series, buf)
        out.write("ap.csv", buf.getvalue(), primary=True)
        storms = sim.storms
    else:
        storms = [e.storm for per in simulate_events(spec) for e in per]
    out.write("storms.csv", _catalog_text(storms), primary=args.emit == "events")


def _catalog_text(storms) -> str:
    from io import StringIO
    buf = StringIO()
    write_catalog(storms, buf)
    return buf.getvalue()


COMMANDS = {
    "decluster": cmd_decluster,
    "fit": cmd_fit,
    "intensity": cmd_intensity,
    "extrapolate": cmd_extrapolate,
    "validate": cmd_validate,
    "predict": cmd_predict,
    "pipeline": cmd_pipeline,
    "simulate": cmd_simulate,
}


# --- argument parsing ------------------------------------------------------------

def _bandwidth(text: str):
    if text == "auto":
        return "auto"
    try:
        h = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bandwidth must be 'auto' or a number, not {text!r}") from None
    if not 0 < h <= 0.15:
        raise argparse.ArgumentTypeError("bandwidth must lie in (0, 0.15]")
    return h


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stormhazard", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p, ap_required=True):
        p.add_argument("--ap", required=ap_required, help="3-hourly ap CSV (timestamp,ap)")
        p.add_argument("--cycles", default=str(historical_cycles_path()),
                       help="cycle table CSV (cycle,start,end,ssn_max); default: bundled cycles 17-23")
        p.add_argument("--lenient", action="store_true", help="keep out-of-set ap values with a warning")
        p.add_argument("--low-level", type=int, action="append",
                       help="storm threshold; repeat for a stability sweep")
        p.add_argument("--run-length", type=int, default=8, help="min below-threshold steps between storms")
        p.add_argument("--strength", choices=("level", "gradient"), default="level")
        p.add_argument("--extreme-level", type=int, default=None)
        p.add_argument("--out-dir", required=True, help="output directory, or - for stdout")

    def fit_args(p):
        p.add_argument("--tol", type=float, default=1e-10)
        p.add_argument("--max-iter", type=int, default=100)

    def kernel_args(p):
        p.add_argument("--bandwidth", type=_bandwidth, default="auto")
        p.add_argument("--grid-size", type=int, default=512)

    def validate_args(p):
        p.add_argument("--threshold", type=float, action="append",
                       help="intensity threshold (per year); default: empirical extreme frequency")

    p = sub.add_parser("decluster", help="storm catalog by runs declustering")
    data_args(p)
    p = sub.add_parser("fit", help="beta MLE, LRT and P400")
    data_args(p), fit_args(p)
    p = sub.add_parser("intensity", help="kernel base intensity")
    data_args(p), fit_args(p), kernel_args(p)
    p = sub.add_parser("extrapolate", help="extreme-level intensity")
    data_args(p), fit_args(p), kernel_args(p)
    p = sub.add_parser("validate", help="chi-square independence of level and cycle position")
    data_args(p), fit_args(p), kernel_args(p), validate_args(p)
    p = sub.add_parser("predict", help="intensity for a new cycle on calendar dates")
    data_args(p), fit_args(p), kernel_args(p)
    p.add_argument("--start", required=True, help="cycle start date (ISO-8601)")
    p.add_argument("--duration-years", type=float, default=11.08)
    p.add_argument("--ssn-max", type=float, required=True, help="predicted max smoothed sunspot number")
    p = sub.add_parser("pipeline", help="decluster, fit, intensity, extrapolate and validate")
    data_args(p), fit_args(p), kernel_args(p), validate_args(p)

    p = sub.add_parser("simulate", help="synthetic catalog from known parameters")
    data_args(p, ap_required=False)
    p.add_argument("--beta", type=float, default=0.006)
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV}, else 0")
    p.add_argument("--alpha", type=float, default=9.3, help="integral of the base intensity (per year)")
    p.add_argument("--contrast", type=float, default=0.6, help="second-half vs first-half modulation")
    p.add_argument("--p-extreme", type=float, default=0.0, help="probability a storm is extreme")
    p.add_argument("--emit", choices=("events", "series"), default="events")

    p = sub.add_parser("replay", help="rerun from a resolved config.json")
    p.add_argument("config")
    p.add_argument("--out-dir", default=None, help="override the recorded output directory")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Fill defaults that depend on other flags and check cross-flag constraints."""
    cfg = {k: v for k, v in vars(args).items()}
    strength = cfg["strength"]
    if not cfg.get("low_level"):
        cfg["low_level"] = [DEFAULT_LOW[strength]]
    if cfg.get("extreme_level") is None:
        cfg["extreme_level"] = DEFAULT_EXTREME[strength]
    for low in cfg["low_level"]:
        if strength == "level" and low not in LEGAL_AP_VALUES:
            raise UsageError(f"--low-level {low} is not a legal ap value")
        if low <= 0:
            raise UsageError("--low-level must be positive")
    if cfg["run_length"] < 1:
        raise UsageError("--run-length must be >= 1")
    if cfg.get("grid_size") is not None and cfg["grid_size"] < 64:
        raise UsageError("--grid-size must be >= 64")
    if cfg["command"] == "simulate":
        if cfg["seed"] is None:
            env = os.environ.get(SEED_ENV)
            try:
                cfg["seed"] = int(env) if env else 0
            except ValueError:
                raise UsageError(f"${SEED_ENV} must be an integer") from None
        if not 0 <= cfg["p_extreme"] < 1:
            raise UsageError("--p-extreme must lie in [0, 1)")
    for key in ("ap", "cycles"):
        if cfg.get(key):
            cfg[key] = str(Path(cfg[key]).resolve())
    if cfg["out_dir"] != "-":
        cfg["out_dir"] = str(Path(cfg["out_dir"]).resolve())
    cfg["version"] = __version__
    return cfg


def run(cfg: dict) -> None:
    args = argparse.Namespace(**cfg)
    out = Output(cfg["out_dir"])
    out.prepare()
    COMMANDS[cfg["command"]](args, out)
    out.write(CONFIG_NAME, to_json(cfg) + "\n")


def _load_config(path: str, out_dir: str | None) -> dict:
    import json
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if cfg.get("command") not in COMMANDS:
        raise UsageError(f"{path}: unknown command {cfg.get('command')!r}")
    if out_dir is not None:
        cfg["out_dir"] = str(Path(out_dir).resolve()) if out_dir != "-" else "-"
    return cfg


def main(argv=None, stderr: TextIO | None = None) -> int:
    err = stderr if stderr is not None else sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "replay":
            cfg = _load_config(args.config, args.out_dir)
        else:
            cfg = resolve(args)
    except UsageError as exc:
        print(f"ERROR: {exc}", file=err)
        return 2
    try:
        run(cfg)
    except UsageError as exc:
        print(f"ERROR: {exc}", file=err)
        return 2
    except (IngestError, ValueError, ConvergenceError, OSError) as exc:
        print(f"ERROR: {exc}", file=err)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
