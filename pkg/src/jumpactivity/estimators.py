"""Estimators of the jump activity index from an equidistant path.

Every statistic is built from the second differences
``d_i = x_i - 2 x_{i-1} + x_{i-2}`` (i = 2..N) of the observed levels, scaled
by a local power variation over the ``k_n`` preceding differences. The scaled
values are homogeneous of degree zero in the path, so all estimators here are
invariant to the scale of the data and to the grid spacing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize_scalar

from .asymptotics import (
    KERNEL_DRAWS,
    KERNEL_SEED,
    MomentBands,
    NotPositiveDefiniteError,
    avar_gmm,
    bias_constant,
    gaussian_kernels,
    kernel_table,
    weight_matrix,
)
from .stable_law import DomainError, c_const

GRID_POINTS = 21
BETA_TOL = 1e-6
# preliminary estimates are kept this far inside (1, 2) before building W
PRELIM_MARGIN = 0.01


class EstimationError(ValueError):
    """An estimator could not produce a value from the given data."""


@dataclass(frozen=True)
class PathGrid:
    """Levels ``x_0..x_N`` observed every ``delta`` time units."""

    values: np.ndarray
    delta: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("path values must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError("path values must be finite")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        """Number of increments N."""
        return self.values.size - 1

    def scaled(self, lam: float) -> "PathGrid":
        return PathGrid(self.values * lam, self.delta)


def default_k_n(n: int) -> int:
    return max(2, math.ceil(1.6 * math.sqrt(n)))


@dataclass
class EstimatorConfig:
    p: float = 0.51
    k_n: int | None = None
    K: int = 5
    u_init: tuple = (0.1, 1.1)
    beta_search: tuple = (1.0 + 1e-6, 2.0 - 1e-6)
    ecf_floor: float = 1e-10
    stderr: bool = True
    kernel_seed: int = KERNEL_SEED
    kernel_draws: int = KERNEL_DRAWS

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError("p must be positive")
        if self.k_n is not None and (int(self.k_n) != self.k_n or self.k_n < 2):
            raise ValueError("k_n must be an integer >= 2")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        u, v = self.u_init
        if not (u > 0 and v > 0 and u != v):
            raise ValueError("u_init must hold two distinct positive values")
        lo, hi = self.beta_search
        if not 1.0 <= lo < hi <= 2.0:
            raise ValueError("beta_search must be a sub-interval of [1, 2]")

    def block_size(self, n: int) -> int:
        return int(self.k_n) if self.k_n is not None else default_k_n(n)


@dataclass
class EstimateResult:
    beta_hat: float
    stderr: float | None
    p_used: float
    k_n: int | None
    n_effective: int
    bands: MomentBands | None = None
    diagnostics: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScaledIncrements:
    """Second differences divided by the local scale ``V_i**(1/p)``."""

    z: np.ndarray
    p: float
    k_n: int
    n_effective: int
    n_degenerate: int

    def ecf(self, u):
        u = np.asarray(u, dtype=float)
        flat = np.atleast_1d(u).ravel()
        out = np.empty(flat.size)
        step = max(1, 2_000_000 // max(self.z.size, 1))
        for lo in range(0, flat.size, step):
            out[lo : lo + step] = np.cos(np.outer(flat[lo : lo + step], self.z)).mean(axis=1)
        return float(out[0]) if u.ndim == 0 else out.reshape(u.shape)


def diff_increments(path: PathGrid) -> np.ndarray:
    """Return ``d_i = x_i - 2 x_{i-1} + x_{i-2}`` for i = 2..N."""
    if path.n < 2:
        raise EstimationError("need at least three observations")
    return np.diff(path.values, n=2)


def local_power_variation(path: PathGrid, p: float, k_n: int) -> np.ndarray:
    """Local scale ``V_i = mean(|d_j|**p, j = i-k_n-1..i-2)`` for i = k_n+3..N."""
    n = path.n
    if n < k_n + 3:
        raise EstimationError(f"path has {n} increments, need at least k_n + 3 = {k_n + 3}")
    a = np.abs(diff_increments(path)) ** p
    return sliding_window_view(a[: n - 3], k_n).sum(axis=1) / k_n


def scaled_increments(path: PathGrid, p: float, k_n: int) -> ScaledIncrements:
    v = local_power_variation(path, p, k_n)
    d = diff_increments(path)[k_n + 1 :]
    ok = v > 0
    if not ok.any():
        raise EstimationError("no usable increments")
    z = d[ok] / v[ok] ** (1.0 / p)
    return ScaledIncrements(z, float(p), int(k_n), int(ok.sum()), int((~ok).sum()))


def ecf(path: PathGrid, p: float, k_n: int, u):
    """Empirical characteristic function of the self-normalized differences."""
    if np.any(np.asarray(u) < 0):
        raise DomainError("u must be non-negative")
    return scaled_increments(path, p, k_n).ecf(u)


def _table(p, beta, seed=KERNEL_SEED, draws=KERNEL_DRAWS):
    return kernel_table(float(p), float(beta), int(seed), int(draws))


def ecf_debiased(path: PathGrid, p: float, k_n: int, u, beta_guess: float, table=None):
    """ECF with the first-order local-scale bias removed at ``beta_guess``."""
    raw = ecf(path, p, k_n, u)
    table = table or _table(p, beta_guess)
    return raw - bias_constant(p, beta_guess, k_n, u, table)


def _clamp(value: float, floor: float, label: str, diagnostics: list):
    if value <= floor:
        diagnostics.append(f"ecf clamped low at u={label}")
        return floor, "low"
    if value >= 1.0 - floor:
        diagnostics.append(f"ecf clamped high at u={label}")
        return 1.0 - floor, "high"
    return value, None


def _two_point(lu: float, lv: float, u: float, v: float, floor: float, diagnostics: list) -> float:
    if u == v or u <= 0 or v <= 0:
        raise DomainError("two-point estimators need distinct positive u and v")
    lu, su = _clamp(lu, floor, repr(u), diagnostics)
    lv, sv = _clamp(lv, floor, repr(v), diagnostics)
    if su is not None and su == sv:
        raise EstimationError("uninformative u grid")
    return (math.log(-math.log(lu)) - math.log(-math.log(lv))) / math.log(u / v)


def two_point_from_curve(lu: float, lv: float, u: float, v: float, ecf_floor: float = 1e-10) -> float:
    """Plug-in two-point formula on given ECF values."""
    return _two_point(lu, lv, u, v, ecf_floor, [])


def beta_fs(path: PathGrid, p: float, k_n: int, u: float = 0.1, v: float = 1.1,
            ecf_floor: float = 1e-10, _inc: ScaledIncrements | None = None) -> EstimateResult:
    """Two-point estimator from the raw (biased) ECF."""
    if u == v or u <= 0 or v <= 0:
        raise DomainError("two-point estimators need distinct positive u and v")
    inc = _inc or scaled_increments(path, p, k_n)
    diags = [f"{inc.n_degenerate} degenerate windows skipped"] if inc.n_degenerate else []
    lu, lv = inc.ecf([u, v])
    b = _two_point(lu, lv, u, v, ecf_floor, diags)
    return EstimateResult(b, None, float(p), int(k_n), inc.n_effective, diagnostics=diags)


def beta_two_point(path: PathGrid, p: float, k_n: int, u: float = 0.1, v: float = 1.1,
                   beta_init: float | None = None, ecf_floor: float = 1e-10,
                   kernel_seed: int = KERNEL_SEED, kernel_draws: int = KERNEL_DRAWS) -> EstimateResult:
    """Two-point estimator on the ECF debiased at a preliminary estimate.

    When ``beta_init`` is omitted the raw two-point estimate at ``(u, v)`` is
    used, clipped into ``[1.01, 1.99]``.
    """
    if u == v or u <= 0 or v <= 0:
        raise DomainError("two-point estimators need distinct positive u and v")
    inc = scaled_increments(path, p, k_n)
    diags = [f"{inc.n_degenerate} degenerate windows skipped"] if inc.n_degenerate else []
    if beta_init is None:
        beta_init = beta_fs(path, p, k_n, u, v, ecf_floor, _inc=inc).beta_hat
        clipped = min(max(beta_init, 1.0 + PRELIM_MARGIN), 2.0 - PRELIM_MARGIN)
        if clipped != beta_init:
            diags.append(f"preliminary estimate {beta_init:.6g} clipped to {clipped:.6g}")
        beta_init = clipped
    elif not 1.0 < beta_init < 2.0:
        raise DomainError("beta_init must lie in (1, 2)")
    table = _table(p, beta_init, kernel_seed, kernel_draws)
    lu, lv = inc.ecf([u, v]) - bias_constant(p, beta_init, k_n, np.array([u, v]), table)
    b = _two_point(lu, lv, u, v, ecf_floor, diags)
    return EstimateResult(b, None, float(p), int(k_n), inc.n_effective, diagnostics=diags,
                          extra={"beta_init": beta_init})


def select_bands(p: float, beta_init: float, K: int = 5, upper: float = 0.95, lower: float = 0.25) -> MomentBands:
    """Split ``[u_upper, u_lower]`` into K equal bands, where ``L(p, u_q) = q``."""
    if not 1.0 < beta_init <= 2.0:
        raise DomainError("beta_init must lie in (1, 2]")
    c = c_const(p, beta_init)
    lo = (-math.log(upper) / c) ** (1.0 / beta_init)
    hi = (-math.log(lower) / c) ** (1.0 / beta_init)
    edges = np.linspace(lo, hi, int(K) + 1)
    edges[0], edges[-1] = lo, hi
    return MomentBands(tuple(edges[:-1]), tuple(edges[1:]))


class _MomentProblem:
    """Debiased log-ECF on the band quadrature nodes, fixed across candidate beta."""

    def __init__(self, inc: ScaledIncrements, bands: MomentBands, beta_init: float,
                 ecf_floor: float, table):
        self.p, self.bands = inc.p, bands
        self.nodes, self.weights = bands.nodes()
        lhat = inc.ecf(self.nodes) - bias_constant(inc.p, beta_init, inc.k_n, self.nodes, table)
        clamped = (lhat <= ecf_floor) | (lhat > 1.0)
        self.n_clamped = int(clamped.sum())
        if (clamped.mean(axis=1) > 0.5).any():
            raise EstimationError("bands out of range")
        self.log_lhat = np.log(np.clip(lhat, ecf_floor, 1.0))
        self.fixed = (self.log_lhat * self.weights).sum(axis=1)

    def __call__(self, beta: float) -> np.ndarray:
        c = c_const(self.p, beta)
        return self.fixed + c * (self.nodes**beta * self.weights).sum(axis=1)


def moment_vector(path: PathGrid, p: float, k_n: int, bands: MomentBands, beta_init: float,
                  beta: float, ecf_floor: float = 1e-10, table=None) -> np.ndarray:
    """Band integrals of ``log L_hat'(u) - log L(p, u, beta)``."""
    table = table or _table(p, beta_init)
    return _MomentProblem(scaled_increments(path, p, k_n), bands, beta_init, ecf_floor, table)(beta)


def _minimize(objective, lo: float, hi: float):
    grid = np.linspace(lo, hi, GRID_POINTS)
    vals = np.array([objective(b) for b in grid])
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, GRID_POINTS - 1)]
    res = minimize_scalar(objective, bounds=(a, b), method="bounded",
                          options={"xatol": BETA_TOL})
    if res.fun <= vals[i]:
        return float(res.x), float(res.fun)
    return float(grid[i]), float(vals[i])


def beta_gmm(path: PathGrid, config: EstimatorConfig | None = None) -> EstimateResult:
    """Optimally weighted moment-matching estimator with its standard error.

    Steps: raw two-point estimate at ``config.u_init``; power fallback to a
    quarter of it when ``p`` is too large; bands and weight matrix at the
    preliminary estimate; minimization of ``m' W^-1 m`` over the search
    bracket; plug-in standard error at the minimizer.
    """
    cfg = config or EstimatorConfig()
    k_n = cfg.block_size(path.n)
    diags: list = []
    inc = scaled_increments(path, cfg.p, k_n)
    fs = beta_fs(path, cfg.p, k_n, *cfg.u_init, ecf_floor=cfg.ecf_floor, _inc=inc)
    diags += fs.diagnostics
    b0 = min(max(fs.beta_hat, 1.0 + PRELIM_MARGIN), 2.0 - PRELIM_MARGIN)
    if b0 != fs.beta_hat:
        diags.append(f"preliminary estimate {fs.beta_hat:.6g} clipped to {b0:.6g}")
    p = cfg.p
    if p >= b0 / 2.0:
        p = b0 / 4.0
        diags.append(f"power fallback to p={p:.6g}")
        inc = scaled_increments(path, p, k_n)
    bands = select_bands(p, b0, cfg.K)
    table = _table(p, b0, cfg.kernel_seed, cfg.kernel_draws)
    w = weight_matrix(p, bands, b0, table).w
    problem = _MomentProblem(inc, bands, b0, cfg.ecf_floor, table)
    if problem.n_clamped:
        diags.append(f"{problem.n_clamped} debiased ECF nodes clamped")
    chol = cho_factor(w)

    def objective(beta):
        m = problem(beta)
        return float(m @ cho_solve(chol, m))

    lo, hi = cfg.beta_search
    beta_hat, fun = _minimize(objective, lo, hi)
    if min(beta_hat - lo, hi - beta_hat) < 10 * BETA_TOL:
        diags.append("search boundary hit")
    stderr = None
    if cfg.stderr:
        at = beta_hat
        if not p < beta_hat / 2.0 or beta_hat >= 2.0 - PRELIM_MARGIN / 10:
            at = b0
            diags.append("stderr evaluated at the preliminary estimate")
        try:
            avar = avar_gmm(p, bands, at, _table(p, at, cfg.kernel_seed, cfg.kernel_draws))
            stderr = math.sqrt(avar / inc.n_effective)
        except NotPositiveDefiniteError as exc:
            diags.append(f"stderr unavailable: {exc}")
    return EstimateResult(beta_hat, stderr, float(p), k_n, inc.n_effective, bands, diags,
                          extra={"beta_fs": fs.beta_hat, "objective": fun})


def power_variations(path: PathGrid, p: float):
    """Return the two differenced power variations used by the baseline."""
    d = diff_increments(path)
    v1 = float(np.sum(np.abs(d) ** p))
    v2 = float(np.sum(np.abs(d[2:] + d[:-2]) ** p))
    return v1, v2


def beta_power_variation(path: PathGrid, p: float) -> EstimateResult:
    """Baseline ``p log 2 / log(V2 / V1)`` from differenced power variations."""
    if not p > 0:
        raise DomainError("p must be positive")
    if path.n < 4:
        raise EstimationError("need at least five observations")
    v1, v2 = power_variations(path, p)
    if v1 == v2 or v1 == 0.0 or v2 == 0.0:
        return EstimateResult(0.0, None, float(p), None, path.n - 1,
                              diagnostics=["degenerate power variations"])
    return EstimateResult(p * math.log(2.0) / math.log(v2 / v1), None, float(p), None, path.n - 1)


def beta_diffusion(path: PathGrid, p: float = 0.75, k_n: int | None = None, c: float = 1.0,
                   rho: float = 2.0, beta_init: float | None = None, ecf_floor: float = 1e-10,
                   kernel_seed: int = KERNEL_SEED, kernel_draws: int = KERNEL_DRAWS) -> EstimateResult:
    """Two-point estimator at a vanishing argument ``u_n = c / log N``.

    Aimed at the jump-diffusion case ``beta = 2``. With ``beta_init`` the ECF
    is debiased at that value and the raw estimate is kept in ``extra``.
    """
    if not 0.5 < p < 1.0:
        raise DomainError("p must lie in (1/2, 1)")
    if not c > 0 or not rho > 0 or rho == 1.0:
        raise DomainError("need c > 0 and rho > 0, rho != 1")
    k_n = k_n or default_k_n(path.n)
    u = c / math.log(path.n)
    v = rho * u
    inc = scaled_increments(path, p, k_n)
    diags = [f"{inc.n_degenerate} degenerate windows skipped"] if inc.n_degenerate else []
    lu, lv = inc.ecf([u, v])
    raw = _two_point(lu, lv, u, v, ecf_floor, diags)
    beta_hat, extra = raw, {"u_n": u, "beta_fs": raw}
    if beta_init is not None:
        table = _table(p, beta_init, kernel_seed, kernel_draws)
        lu, lv = np.array([lu, lv]) - bias_constant(p, beta_init, k_n, np.array([u, v]), table)
        beta_hat = _two_point(lu, lv, u, v, ecf_floor, diags)
    x0, x1 = gaussian_kernels(float(p), kernel_seed, kernel_draws)
    c2 = c_const(p, 2.0)
    a = np.array([1.0 / (24.0 * c2), -(2.0 / p) * c2])
    var = float(a @ (x0 + x1 + x1.T) @ a) / math.log(rho) ** 2
    stderr = u**2 * abs(1.0 - rho**2) * math.sqrt(max(var, 0.0)) / math.sqrt(inc.n_effective)
    return EstimateResult(beta_hat, stderr, float(p), k_n, inc.n_effective, diagnostics=diags, extra=extra)
