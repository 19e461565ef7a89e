"""Command-line interface: rolling-window estimation, simulation, Monte Carlo and plot data.

Configuration files are flat ``key = value`` text with ``#`` comments. Keys
use the long flag names with dashes or underscores. Command-line flags
override the file and built-in defaults come last.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from . import __version__
from .asymptotics import KERNEL_DRAWS, KERNEL_SEED, MomentBands, avar_gmm
from .estimators import (
    EstimatorConfig,
    PathGrid,
    beta_diffusion,
    beta_fs,
    beta_gmm,
    beta_power_variation,
    beta_two_point,
    select_bands,
)
from .levy_sim import (
    DEFAULT_CUTOFF,
    DEFAULT_SUBSTEPS,
    SimSpec,
    TemperedStableComponent,
    simulate_brownian,
    simulate_path,
    table1_spec,
)
from .mc_harness import (
    ESTIMATORS,
    Case,
    ExperimentError,
    ExperimentSpec,
    default_workers,
    efficiency_table,
    run_experiment,
    write_csv,
)

EXIT_OK, EXIT_INPUT, EXIT_NO_RESULT = 0, 1, 2
SPACING_RTOL = 1e-6


class InputError(ValueError):
    """Bad input file, config or flag value (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    # Usage errors share exit code 1 with input errors; 2 is reserved for
    # "ran fine but produced no estimate".
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def fmt_num(x) -> str:
    """Locale-independent 17-significant-digit formatting."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _json_value(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "null"
    if isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool):
        return fmt_num(x)
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(_json_value(v) for v in x) + "]"
    return json.dumps(x)


def json_line(d: dict) -> str:
    return "{" + ", ".join(f"{json.dumps(k)}: {_json_value(v)}" for k, v in d.items()) + "}"


# -- series files -------------------------------------------------------------


@dataclass
class SeriesFile:
    """Equidistant series: timestamps (as given) and float values."""

    stamps: list
    values: np.ndarray
    delta: float = 1.0

    def path(self, start: int = 0, stop: int | None = None) -> PathGrid:
        return PathGrid(self.values[start:stop], self.delta)


def _stamp_number(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text.replace("Z", "+00:00")).timestamp()
    except ValueError:
        raise InputError(f"cannot parse timestamp {text!r}") from None


def read_series(fh) -> SeriesFile:
    """Parse ``timestamp,value`` (or bare ``value``) rows, with optional header.

    Timestamps are integer indices or ISO-8601 strings. They must increase
    strictly with spacing equal to the first gap within relative 1e-6.
    """
    rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1)
            if r and r[0].strip() and not r[0].lstrip().startswith("#")]
    if rows:
        try:
            float(rows[0][1][-1])
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise InputError("series file has no data rows")
    stamps, values, times = [], [], []
    for line, r in rows:
        if len(r) > 2:
            raise InputError(f"row {line}: expected 'timestamp,value' or 'value'")
        try:
            values.append(float(r[-1]))
        except ValueError:
            raise InputError(f"row {line}: cannot parse value {r[-1]!r}") from None
        if not math.isfinite(values[-1]):
            raise InputError(f"row {line}: non-finite value")
        stamp = r[0].strip() if len(r) == 2 else str(len(stamps))
        stamps.append(stamp)
        times.append(_stamp_number(stamp))
    t = np.asarray(times, dtype=float)
    delta = 1.0
    if t.size > 1:
        gaps = np.diff(t)
        delta = float(gaps[0])
        bad = np.flatnonzero((gaps <= 0) | (np.abs(gaps - delta) > SPACING_RTOL * abs(delta)))
        if bad.size:
            line = rows[bad[0] + 1][0]
            raise InputError(f"row {line}: timestamps not strictly increasing and equidistant")
    return SeriesFile(stamps, np.asarray(values), delta)


def write_series(path: PathGrid, fh) -> None:
    fh.write("index,value\n")
    for i, x in enumerate(path.values):
        fh.write(f"{i},{fmt_num(x)}\n")


# -- config -------------------------------------------------------------------


def read_config(path: str | None) -> dict:
    """Flat ``key = value`` file into a dict of strings (keys use underscores)."""
    if not path:
        return {}
    out = {}
    try:
        with open(path) as fh:
            for n, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise InputError(f"{path}:{n}: expected 'key = value'")
                k, v = (s.strip() for s in line.split("=", 1))
                out[k.replace("-", "_")] = v
    except OSError as exc:
        raise InputError(str(exc)) from None
    return out


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise InputError(f"not a boolean: {text!r}")


def _floats(text: str) -> list:
    return [float(s) for s in str(text).replace(";", ",").split(",") if s.strip()]


def _merge(args, conf: dict, defaults: dict) -> dict:
    """Flag value if given, else config value, else default; converted by type of default."""
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        raw = flag if flag is not None else conf.get(key)
        if raw is None:
            out[key] = default
            continue
        kind = type(default)
        try:
            if isinstance(raw, str) and kind is bool:
                out[key] = _bool(raw)
            elif isinstance(raw, str) and kind in (int, float):
                out[key] = kind(raw)
            else:
                out[key] = raw
        except ValueError:
            raise InputError(f"bad value for {key}: {raw!r}") from None
    unknown = set(conf) - set(defaults)
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return out


def _bands(text: str) -> MomentBands:
    try:
        pairs = [tuple(float(x) for x in item.split(":")) for item in text.split(",") if item.strip()]
        lows, highs = zip(*pairs)
    except ValueError:
        raise InputError(f"bands must look like 'lo:hi,lo:hi', got {text!r}") from None
    return MomentBands(lows, highs)


# -- estimate -----------------------------------------------------------------

ESTIMATE_DEFAULTS = {
    "window": 0, "step": 0, "estimator": "gmm", "p": 0.51, "k_n": 0, "K": 5,
    "stderr": True, "format": "jsonl", "seed": KERNEL_SEED, "draws": KERNEL_DRAWS,
    "workers": 0,
}


@dataclass
class WindowResult:
    start: str
    end: str
    beta_hat: float | None
    stderr: float | None
    p_used: float | None
    k_n: int | None
    K: int | None
    diagnostics: list = field(default_factory=list)


WINDOW_FIELDS = ("start", "end", "beta_hat", "stderr", "p_used", "k_n", "K", "diagnostics")


def _estimate_window(args):
    series, lo, hi, opts = args
    stamps = series.stamps
    k_n = opts["k_n"] or None
    cfg = EstimatorConfig(p=opts["p"], k_n=k_n, K=opts["K"], stderr=opts["stderr"],
                          kernel_seed=opts["seed"], kernel_draws=opts["draws"])
    path = series.path(lo, hi + 1)
    name = opts["estimator"]
    try:
        kb = cfg.block_size(path.n)
        if name == "gmm":
            res = beta_gmm(path, cfg)
        elif name == "fs":
            res = beta_fs(path, cfg.p, kb)
        elif name == "two_point":
            res = beta_two_point(path, cfg.p, kb, kernel_seed=cfg.kernel_seed,
                                 kernel_draws=cfg.kernel_draws)
        elif name == "diffusion":
            res = beta_diffusion(path, cfg.p, kb, kernel_seed=cfg.kernel_seed,
                                 kernel_draws=cfg.kernel_draws)
        else:
            res = beta_power_variation(path, cfg.p)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return WindowResult(stamps[lo], stamps[hi], None, None, None, None, None, [str(exc)])
    K = res.bands.k if res.bands is not None else None
    return WindowResult(stamps[lo], stamps[hi], res.beta_hat, res.stderr, res.p_used,
                        res.k_n, K, list(res.diagnostics))


def _write_window(res: WindowResult, fmt: str, out, first: bool):
    d = {k: getattr(res, k) for k in WINDOW_FIELDS}
    if fmt == "jsonl":
        out.write(json_line(d) + "\n")
        return
    w = csv.writer(out, lineterminator="\n")
    if first:
        w.writerow(WINDOW_FIELDS)
    d["diagnostics"] = "; ".join(d["diagnostics"])
    w.writerow([fmt_num(v) if not isinstance(v, str) else v for v in d.values()])


def cmd_estimate(args) -> int:
    opts = _merge(args, read_config(args.config), ESTIMATE_DEFAULTS)
    if opts["estimator"] not in ESTIMATORS:
        raise InputError(f"unknown estimator {opts['estimator']!r}")
    if opts["format"] not in ("jsonl", "csv"):
        raise InputError("format must be jsonl or csv")
    try:
        fh = sys.stdin if args.series == "-" else open(args.series, newline="")
    except OSError as exc:
        raise InputError(str(exc)) from None
    with fh:
        series = read_series(fh)
    n_obs = len(series.values)
    window = opts["window"] or n_obs
    step = opts["step"] or window
    if window < 2 or step < 1:
        raise InputError("window must be >= 2 and step >= 1")
    starts = list(range(0, n_obs - window + 1, step))
    tail = n_obs - (starts[-1] + window if starts else 0)
    if tail > 0:
        print(f"notice: {tail} trailing observations do not fill a window and are skipped",
              file=sys.stderr)
    tasks = [(series, s, s + window - 1, opts) for s in starts]
    workers = opts["workers"] or default_workers()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_estimate_window, tasks)
            return _emit(results, opts, args.output)
    return _emit(map(_estimate_window, tasks), opts, args.output)


def _emit(results, opts, output) -> int:
    out = open(output, "w", newline="") if output else sys.stdout
    ok = 0
    try:
        for i, res in enumerate(results):
            if res.beta_hat is not None:
                ok += 1
            else:
                print(f"window {res.start}..{res.end}: {res.diagnostics[0]}", file=sys.stderr)
            _write_window(res, opts["format"], out, i == 0)
            out.flush()
    finally:
        if output:
            out.close()
    return EXIT_OK if ok else EXIT_NO_RESULT


# -- simulate -----------------------------------------------------------------

SIMULATE_DEFAULTS = {
    "case": 0, "model": "table1", "beta": 1.5, "days": 10, "per_day": 100,
    "substeps": DEFAULT_SUBSTEPS, "cutoff_eps": DEFAULT_CUTOFF, "seed": 0,
    "constant_vol": False, "drift": 0.0,
}


def _sim_spec(o: dict) -> tuple:
    """(kind, SimSpec) from merged simulate options."""
    common = dict(days=o["days"], per_day=o["per_day"], substeps=o["substeps"],
                  cutoff_eps=o["cutoff_eps"], seed=o["seed"], drift=o["drift"])
    if o["constant_vol"]:
        common["vol"] = None
    if o["model"] == "table1":
        if o["case"] not in (1, 2, 3, 4):
            raise InputError("model table1 needs --case 1..4")
        return "model", table1_spec(o["case"], **common)
    if o["model"] == "stable":
        if not 0 < o["beta"] < 2:
            raise InputError("beta must lie in (0, 2)")
        # unit-normalized stable driver: a with 2 a Gamma(1-b) cos(pi b/2) / b = 1
        comp = TemperedStableComponent(1.0, o["beta"])
        a = 1.0 / comp.stable_scale(1.0) ** o["beta"]
        return "model", SimSpec(driver=(TemperedStableComponent(a, o["beta"]),), **common)
    if o["model"] == "brownian":
        return "brownian", SimSpec(**common)
    raise InputError(f"unknown model {o['model']!r}")


def cmd_simulate(args) -> int:
    o = _merge(args, read_config(args.config), SIMULATE_DEFAULTS)
    kind, spec = _sim_spec(o)
    rng = np.random.default_rng(spec.seed)
    path = simulate_path(spec, rng) if kind == "model" else simulate_brownian(spec, rng)
    if args.output:
        with open(args.output, "w", newline="") as fh:
            write_series(path, fh)
    else:
        write_series(path, sys.stdout)
    return EXIT_OK


# -- mc -----------------------------------------------------------------------

MC_DEFAULTS = {
    "cases": "1,2,3,4", "model": "table1", "betas": "", "n_obs": 0,
    "replications": 250, "master_seed": 0,
    "estimators": "gmm,power_variation", "p": 0.51, "k_n": 0, "K": 5, "stderr": False,
    "days": 10, "per_day": 100, "substeps": DEFAULT_SUBSTEPS, "cutoff_eps": DEFAULT_CUTOFF,
    "pv_powers": "", "workers": 0,
}


def experiment_from_options(o: dict) -> ExperimentSpec:
    cfg = EstimatorConfig(p=o["p"], k_n=o["k_n"] or None, K=o["K"], stderr=o["stderr"])
    powers = tuple(_floats(o["pv_powers"]))
    cases = []
    if o["model"] == "table1":
        for c in _floats(o["cases"]):
            c = int(c)
            if c not in (1, 2, 3, 4):
                raise InputError(f"unknown case {c}")
            sim = table1_spec(c, days=o["days"], per_day=o["per_day"], substeps=o["substeps"],
                              cutoff_eps=o["cutoff_eps"])
            cases.append(Case(sim.driver[0].alpha, sim=sim, config=cfg, pv_powers=powers,
                              label=f"case{c}"))
    elif o["model"] in ("stable", "brownian"):
        if not o["n_obs"]:
            raise InputError("stable and brownian experiments need n_obs")
        betas = _floats(o["betas"]) if o["model"] == "stable" else [2.0]
        if not betas:
            raise InputError("stable experiments need betas")
        cases = [Case(b, kind=o["model"], n_obs=o["n_obs"], config=cfg, pv_powers=powers)
                 for b in betas]
    else:
        raise InputError(f"unknown model {o['model']!r}")
    seed = o["master_seed"]
    ests = tuple(s.strip() for s in o["estimators"].split(",") if s.strip())
    return ExperimentSpec(cases, o["replications"], int(seed), ests)


def cmd_mc(args) -> int:
    o = _merge(args, read_config(args.config), MC_DEFAULTS)
    if args.seed is not None:
        o["master_seed"] = args.seed
    spec = experiment_from_options(o)
    res = run_experiment(spec, o["workers"] or None)
    if args.raw:
        write_csv(res.records, args.raw)
    if args.output:
        write_csv(res.rows, args.output)
    else:
        write_csv(res.rows, sys.stdout)
    return EXIT_OK


# -- avar / plotdata ----------------------------------------------------------


def cmd_avar(args) -> int:
    p, beta = args.p, args.beta
    if not 1.0 < beta < 2.0:
        raise InputError("beta must lie in (1, 2)")
    bands = _bands(args.bands) if args.bands else select_bands(p, beta, args.K)
    avar = avar_gmm(p, bands, beta)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["p", "beta", "K", "avar", "sd"])
    w.writerow([fmt_num(p), fmt_num(beta), bands.k, fmt_num(avar), fmt_num(math.sqrt(avar))])
    sys.stdout.write(out.getvalue())
    return EXIT_OK


def cmd_plotdata(args) -> int:
    betas = _floats(args.betas)
    rows = efficiency_table(betas, lambda b: args.p_ratio * b, args.n_obs, args.replications,
                            args.seed, args.K, args.workers or None)
    if args.output:
        write_csv(rows, args.output)
    else:
        write_csv(rows, sys.stdout)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="jumpactivity", description="Estimate the jump activity index of a series.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("estimate", help="rolling-window estimation on a series file")
    e.add_argument("series", help="CSV of timestamp,value rows ('-' for stdin)")
    e.add_argument("--config")
    e.add_argument("--window", type=int, help="observations per window (default: whole series)")
    e.add_argument("--step", type=int, help="window step (default: window)")
    e.add_argument("--estimator", choices=ESTIMATORS)
    e.add_argument("--p", type=float)
    e.add_argument("--k-n", dest="k_n", type=int)
    e.add_argument("--K", type=int)
    e.add_argument("--no-stderr", dest="stderr", action="store_const", const=False)
    e.add_argument("--format", choices=("jsonl", "csv"))
    e.add_argument("--seed", type=int, help="seed of the kernel Monte Carlo draws")
    e.add_argument("--draws", type=int, help="kernel Monte Carlo draws")
    e.add_argument("--workers", type=int)
    e.add_argument("--output", "-o")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", help="simulate a path and write it as a series file")
    s.add_argument("--config")
    s.add_argument("--model", choices=("table1", "stable", "brownian"))
    s.add_argument("--case", type=int, help="Monte Carlo design 1..4 (model table1)")
    s.add_argument("--beta", type=float, help="index of the stable driver (model stable)")
    s.add_argument("--days", type=int)
    s.add_argument("--per-day", dest="per_day", type=int)
    s.add_argument("--substeps", type=int)
    s.add_argument("--cutoff-eps", dest="cutoff_eps", type=float)
    s.add_argument("--constant-vol", dest="constant_vol", action="store_const", const=True)
    s.add_argument("--drift", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--output", "-o")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("mc", help="run a Monte Carlo experiment")
    m.add_argument("--config")
    m.add_argument("--model", choices=("table1", "stable", "brownian"))
    m.add_argument("--cases")
    m.add_argument("--betas")
    m.add_argument("--n-obs", dest="n_obs", type=int)
    m.add_argument("--replications", type=int)
    m.add_argument("--estimators")
    m.add_argument("--p", type=float)
    m.add_argument("--k-n", dest="k_n", type=int)
    m.add_argument("--K", type=int)
    m.add_argument("--stderr", action="store_const", const=True)
    m.add_argument("--pv-powers", dest="pv_powers")
    m.add_argument("--seed", type=int, help="master seed (overrides master_seed)")
    m.add_argument("--workers", type=int)
    m.add_argument("--raw", help="also write per-replication records here")
    m.add_argument("--output", "-o")
    m.set_defaults(func=cmd_mc)

    a = sub.add_parser("avar", help="asymptotic variance of the moment-matching estimator")
    a.add_argument("--p", type=float, default=0.51)
    a.add_argument("--beta", type=float, required=True)
    a.add_argument("--K", type=int, default=5)
    a.add_argument("--bands", help="explicit bands 'lo:hi,lo:hi,...'")
    a.add_argument("--seed", type=int, default=KERNEL_SEED, help="accepted for uniformity")
    a.set_defaults(func=cmd_avar)

    pl = sub.add_parser("plotdata", help="efficiency comparison table as CSV")
    pl.add_argument("--betas", default="1.1,1.2,1.3,1.4,1.5,1.6,1.7,1.75,1.8,1.9")
    pl.add_argument("--p-ratio", dest="p_ratio", type=float, default=0.34)
    pl.add_argument("--n-obs", dest="n_obs", type=int, default=20000)
    pl.add_argument("--replications", type=int, default=200)
    pl.add_argument("--K", type=int, default=5)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--workers", type=int)
    pl.add_argument("--output", "-o")
    pl.set_defaults(func=cmd_plotdata)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ExperimentError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"jumpactivity: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
