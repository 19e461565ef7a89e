"""Seeded, order-independent Monte Carlo replications.

Replication ``r`` of case ``c`` draws from
``numpy.random.Generator(PCG64(SeedSequence(master_seed, spawn_key=(c, r))))``.
SeedSequence hashes the entropy and spawn key into the PCG64 state, so each
replication owns an independent stream regardless of which worker runs it, and
raw records are sorted by ``(case, rep, estimator, p)`` before aggregation.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .asymptotics import avar_gmm
from .estimators import (
    EstimatorConfig,
    beta_diffusion,
    beta_fs,
    beta_gmm,
    beta_power_variation,
    beta_two_point,
    select_bands,
)
from .levy_sim import SimSpec, simulate_brownian, simulate_path, simulate_stable_levy

ESTIMATORS = ("gmm", "fs", "two_point", "power_variation", "diffusion")
MAX_FAILURE_RATE = 0.10
THREADS_ENV = "JUMPACTIVITY_THREADS"


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class Case:
    """One simulation design.

    ``kind`` selects the data generator: ``"model"`` runs :func:`simulate_path`
    on ``sim``; ``"stable"`` and ``"brownian"`` produce constant-volatility
    paths with ``n_obs`` increments.
    """

    true_beta: float
    kind: str = "model"
    sim: SimSpec | None = None
    n_obs: int | None = None
    config: EstimatorConfig = field(default_factory=EstimatorConfig)
    pv_powers: tuple = ()
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("model", "stable", "brownian"):
            raise ValueError(f"unknown case kind {self.kind!r}")
        if self.kind == "model" and self.sim is None:
            raise ValueError("model cases need a SimSpec")
        if self.kind != "model" and not self.n_obs:
            raise ValueError("stable and brownian cases need n_obs")

    def powers(self) -> tuple:
        if self.pv_powers:
            return tuple(self.pv_powers)
        return tuple(float(x) for x in np.linspace(7 / 40, 19 / 40, 7) * self.true_beta)


@dataclass(frozen=True)
class ExperimentSpec:
    cases: tuple
    replications: int = 250
    master_seed: int = 0
    estimators: tuple = ("gmm", "power_variation")

    def __post_init__(self):
        object.__setattr__(self, "cases", tuple(self.cases))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.replications < 1 or not self.cases:
            raise ValueError("need at least one case and one replication")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ValueError(f"unknown estimators: {sorted(bad)}")


@dataclass(frozen=True)
class Record:
    case: int
    rep: int
    estimator: str
    p: float
    beta_hat: float
    stderr: float
    error: str = ""


@dataclass(frozen=True)
class SummaryRow:
    case: int
    estimator: str
    true_beta: float
    median: float
    iqr: float
    mad: float
    coverage95: float | None
    rep_count: int
    failures: int
    p: float | None = None


@dataclass
class ExperimentResult:
    rows: list
    records: list


def replication_rng(master_seed: int, case: int, rep: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(case), int(rep)))
    return np.random.Generator(np.random.PCG64(ss))


def simulate_case(case: Case, rng: np.random.Generator):
    if case.kind == "model":
        return simulate_path(case.sim, rng)
    if case.kind == "stable":
        return simulate_stable_levy(case.true_beta, case.n_obs, rng)
    return simulate_brownian(SimSpec(vol=None, days=1, per_day=case.n_obs, substeps=1), rng)


def _estimate(name, path, case: Case):
    cfg = case.config
    k_n = cfg.block_size(path.n)
    if name == "gmm":
        return [beta_gmm(path, cfg)]
    if name == "fs":
        return [beta_fs(path, cfg.p, k_n, *cfg.u_init, ecf_floor=cfg.ecf_floor)]
    if name == "two_point":
        return [beta_two_point(path, cfg.p, k_n, *cfg.u_init, ecf_floor=cfg.ecf_floor,
                               kernel_seed=cfg.kernel_seed, kernel_draws=cfg.kernel_draws)]
    if name == "diffusion":
        return [beta_diffusion(path, cfg.p, k_n)]
    return [beta_power_variation(path, p) for p in case.powers()]


def _replicate(args):
    spec, ci, rep = args
    case = spec.cases[ci]
    path = simulate_case(case, replication_rng(spec.master_seed, ci, rep))
    out = []
    for name in spec.estimators:
        try:
            for res in _estimate(name, path, case):
                se = math.nan if res.stderr is None else res.stderr
                out.append(Record(ci, rep, name, res.p_used, res.beta_hat, se))
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            powers = case.powers() if name == "power_variation" else (case.config.p,)
            out.extend(Record(ci, rep, name, p, math.nan, math.nan, str(exc) or type(exc).__name__)
                       for p in powers)
    return out


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_records(spec: ExperimentSpec, workers: int | None = None) -> list:
    """Raw per-replication records, sorted and independent of ``workers``."""
    workers = workers or default_workers()
    tasks = [(spec, ci, r) for ci in range(len(spec.cases)) for r in range(spec.replications)]
    if workers == 1:
        chunks = map(_replicate, tasks)
        records = [rec for chunk in chunks for rec in chunk]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [rec for chunk in pool.map(_replicate, tasks, chunksize=4) for rec in chunk]
    return sorted(records, key=lambda r: (r.case, r.rep, r.estimator, r.p))


def summarize(values, true_beta: float):
    """Median, inter-quartile range (linear interpolation) and mean absolute deviation."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("summarize needs at least one value")
    q25, med, q75 = np.quantile(v, [0.25, 0.5, 0.75])
    return float(med), float(q75 - q25), float(np.mean(np.abs(v - true_beta)))


def _row(ci, name, true_beta, recs, p=None):
    ok = [r for r in recs if not r.error]
    failures = len(recs) - len(ok)
    if not ok:
        return SummaryRow(ci, name, true_beta, math.nan, math.nan, math.nan, None, 0, failures, p)
    med, iqr, mad = summarize([r.beta_hat for r in ok], true_beta)
    se = np.array([r.stderr for r in ok])
    cover = None
    if np.all(np.isfinite(se)):
        bh = np.array([r.beta_hat for r in ok])
        cover = float(np.mean(np.abs(bh - true_beta) <= 1.96 * se))
    return SummaryRow(ci, name, true_beta, med, iqr, mad, cover, len(ok), failures, p)


def aggregate(spec: ExperimentSpec, records: list) -> list:
    """One summary row per (case, estimator).

    For the power-variation baseline the reported power is the one with the
    smallest replication standard deviation among the case's candidate powers.
    """
    rows = []
    for ci, case in enumerate(spec.cases):
        for name in spec.estimators:
            recs = [r for r in records if r.case == ci and r.estimator == name]
            if name != "power_variation":
                rows.append(_row(ci, name, case.true_beta, recs))
                continue
            best = None
            for p in case.powers():
                sub = [r for r in recs if r.p == p]
                vals = [r.beta_hat for r in sub if not r.error]
                sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else math.inf
                if best is None or sd < best[0]:
                    best = (sd, p, sub)
            rows.append(_row(ci, name, case.true_beta, best[2], best[1]))
    return rows


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> ExperimentResult:
    records = run_records(spec, workers)
    rows = aggregate(spec, records)
    for row in rows:
        total = row.rep_count + row.failures
        if total and row.failures / total > MAX_FAILURE_RATE:
            raise ExperimentError(
                f"case {row.case} estimator {row.estimator}: {row.failures}/{total} replications failed"
            )
    return ExperimentResult(rows, records)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(rows, path_or_file) -> None:
    """Write dataclass rows (records or summaries) with a header line."""
    rows = list(rows)
    if not rows:
        return
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        names = list(asdict(rows[0]))
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in rows:
            d = asdict(row)
            writer.writerow([_fmt(d[k]) for k in names])
    finally:
        if own:
            fh.close()


@dataclass(frozen=True)
class EfficiencyRow:
    beta: float
    p_gmm: float
    sd_gmm_analytic: float
    p_pv: float
    sd_pv_empirical: float


def efficiency_table(beta_grid, p_rule=lambda b: 0.34 * b, n_obs: int = 20000,
                     replications: int = 200, master_seed: int = 0, K: int = 5,
                     workers: int | None = None) -> list:
    """Analytic GMM standard deviation next to the empirical baseline one.

    Both are on the ``sqrt(n)`` scale. The baseline uses constant-volatility
    stable paths and the power with the smallest empirical spread.
    """
    cases = []
    rows = []
    for b in beta_grid:
        if not 1.0 < b < 2.0:
            raise ValueError("beta grid must lie in (1, 2)")
        cases.append(Case(float(b), kind="stable", n_obs=n_obs))
    spec = ExperimentSpec(cases, replications, master_seed, ("power_variation",))
    records = run_records(spec, workers)
    summary = aggregate(spec, records)
    for b, row in zip(beta_grid, summary):
        p = float(p_rule(b))
        avar = avar_gmm(p, select_bands(p, b, K), b)
        vals = [r.beta_hat for r in records
                if r.case == row.case and r.p == row.p and not r.error]
        sd_pv = float(np.std(vals, ddof=1)) * math.sqrt(n_obs)
        rows.append(EfficiencyRow(float(b), p, math.sqrt(avar), row.p, sd_pv))
    return rows
