"""Simulation of tempered-stable driven paths with OU stochastic volatility.

Each tempered-stable component is simulated as a compound Poisson process of
jumps above ``cutoff_eps`` plus a Gaussian stand-in for the jumps below it
with matched variance (and matched mean for one-sided components). Jumps above
the cutoff are drawn by thinning a Pareto proposal with acceptance
``exp(-lambda |x|)``, which gives the exact tempered law without computing the
tempered intensity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter
from scipy.special import gamma, gammainc

from .estimators import PathGrid
from .stable_law import sample_symmetric_stable

DEFAULT_SUBSTEPS = 50
DEFAULT_CUTOFF = 1e-3

# (beta, A0, A1) for the four Monte Carlo designs
TABLE1_CASES = {
    1: (1.05, 0.1299, 0.0113),
    2: (1.25, 0.1443, 0.0125),
    3: (1.50, 0.1410, 0.0141),
    4: (1.75, 0.0975, 0.0158),
}
TEMPERING = 0.25


@dataclass(frozen=True)
class TemperedStableComponent:
    """Levy density ``a exp(-lam |x|) / |x|**(1+alpha)`` on one or both sides."""

    a: float
    alpha: float
    lam: float = 0.0
    signed: bool = True

    def __post_init__(self):
        if self.a < 0 or not 0 < self.alpha < 2 or self.lam < 0:
            raise ValueError("need a >= 0, 0 < alpha < 2, lam >= 0")
        if not self.signed and self.alpha >= 1:
            raise ValueError("one-sided components need alpha < 1")

    @property
    def sides(self) -> int:
        return 2 if self.signed else 1

    def proposal_rate(self, eps: float) -> float:
        """Intensity of untempered jumps with ``|x| > eps``."""
        return self.sides * self.a * eps ** (-self.alpha) / self.alpha

    def _lower_moment(self, order: float, eps: float) -> float:
        # a * int_0^eps x^(order-1-alpha) exp(-lam x) dx, for order > alpha
        s = order - self.alpha
        if self.lam == 0:
            return self.a * eps**s / s
        return self.a * self.lam ** (-s) * gammainc(s, self.lam * eps) * gamma(s)

    def small_jump_variance(self, eps: float) -> float:
        return self.sides * self._lower_moment(2.0, eps)

    def small_jump_mean(self, eps: float) -> float:
        return 0.0 if self.signed else self._lower_moment(1.0, eps)

    def stable_scale(self, dt: float = 1.0) -> float:
        """Scale ``s`` with cf ``exp(-(s|u|)**alpha)`` of an untempered, signed increment."""
        if self.lam != 0 or not self.signed:
            raise ValueError("defined for untempered symmetric components only")
        al = self.alpha
        k = math.pi / 2 if al == 1 else gamma(1 - al) * math.cos(math.pi * al / 2) / al
        return (2.0 * self.a * k * dt) ** (1.0 / al)


@dataclass(frozen=True)
class OUSpec:
    """``d sigma = -kappa sigma dt + dZ`` with a tempered-stable subordinator Z."""

    kappa: float = 0.03
    jumps: TemperedStableComponent = TemperedStableComponent(0.0293, 0.5, 3.0, signed=False)
    sigma0: float = 1.0


@dataclass(frozen=True)
class SimSpec:
    driver: tuple = ()
    vol: OUSpec | None = field(default_factory=OUSpec)
    days: int = 10
    per_day: int = 100
    substeps: int = DEFAULT_SUBSTEPS
    cutoff_eps: float = DEFAULT_CUTOFF
    seed: int = 0
    drift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "driver", tuple(self.driver))
        if self.substeps < 1 or self.cutoff_eps <= 0 or self.days < 1 or self.per_day < 1:
            raise ValueError("invalid simulation grid")

    @property
    def n_obs(self) -> int:
        return self.days * self.per_day


def table1_spec(case: int, **overrides) -> SimSpec:
    """Simulation design for one of the four Monte Carlo cases (1..4)."""
    beta, a0, a1 = TABLE1_CASES[case]
    driver = (
        TemperedStableComponent(a0, beta, TEMPERING),
        TemperedStableComponent(a1, beta / 3.0, TEMPERING),
    )
    return SimSpec(driver=driver, **overrides)


def _jumps(comp: TemperedStableComponent, steps: np.ndarray, eps: float, rng: np.random.Generator):
    """Jumps above ``eps`` per step of length ``steps``: (step index, offset fraction, size)."""
    counts = rng.poisson(comp.proposal_rate(eps) * steps)
    idx = np.repeat(np.arange(steps.size), counts)
    m = idx.size
    x = eps * (1.0 - rng.random(m)) ** (-1.0 / comp.alpha)
    keep = rng.random(m) < np.exp(-comp.lam * x)
    if comp.signed:
        x = np.where(rng.random(m) < 0.5, -x, x)
    pos = rng.random(m)
    return idx[keep], pos[keep], x[keep]


def levy_increment(component: TemperedStableComponent, dt: float, rng: np.random.Generator,
                   size: int | None = None, cutoff_eps: float = DEFAULT_CUTOFF):
    """Increments of one component over ``size`` consecutive steps of length dt."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = 1 if size is None else int(size)
    idx, _, x = _jumps(component, np.full(n, float(dt)), cutoff_eps, rng)
    out = np.bincount(idx, weights=x, minlength=n).astype(float)
    mean = component.small_jump_mean(cutoff_eps) * dt
    sd = math.sqrt(component.small_jump_variance(cutoff_eps) * dt)
    out += rng.normal(mean, sd, n)
    return float(out[0]) if size is None else out


def simulate_vol(vol: OUSpec, grid_times, rng: np.random.Generator,
                 cutoff_eps: float = DEFAULT_CUTOFF) -> np.ndarray:
    """Volatility at ``grid_times``, started at ``vol.sigma0`` at the first time.

    Between grid points the decay is exact for every simulated jump; the
    small-jump mean is integrated exactly and its Gaussian part is added at
    step end.
    """
    t = np.asarray(grid_times, dtype=float)
    h = np.diff(t)
    if np.any(h <= 0):
        raise ValueError("grid must be strictly increasing")
    k, comp = vol.kappa, vol.jumps
    idx, pos, x = _jumps(comp, h, cutoff_eps, rng)
    b = np.bincount(idx, weights=x * np.exp(-k * h[idx] * (1.0 - pos)), minlength=h.size).astype(float)
    mean = comp.small_jump_mean(cutoff_eps)
    b += mean * (-np.expm1(-k * h) / k if k > 0 else h)
    b += rng.normal(0.0, 1.0, h.size) * np.sqrt(comp.small_jump_variance(cutoff_eps) * h)
    decay = np.exp(-k * h)
    if np.allclose(decay, decay[0], rtol=0, atol=1e-15):
        rest = lfilter([1.0], [1.0, -decay[0]], b, zi=[decay[0] * vol.sigma0])[0]
    else:
        rest = np.empty(h.size)
        s = vol.sigma0
        for i in range(h.size):
            s = decay[i] * s + b[i]
            rest[i] = s
    return np.concatenate([[vol.sigma0], rest])


def simulate_path(spec: SimSpec, rng: np.random.Generator | None = None) -> PathGrid:
    """Simulate ``dX = sigma_{t-} dL`` and record it every ``substeps`` fine steps."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    n_sub = spec.n_obs * spec.substeps
    dt = 1.0 / (spec.per_day * spec.substeps)
    if spec.vol is not None:
        sigma = simulate_vol(spec.vol, np.arange(n_sub + 1) * dt, rng, spec.cutoff_eps)[:-1]
    else:
        sigma = np.ones(n_sub)
    dl = np.zeros(n_sub)
    for comp in spec.driver:
        dl += levy_increment(comp, dt, rng, n_sub, spec.cutoff_eps)
    x = np.concatenate([[0.0], np.cumsum(sigma * dl + spec.drift * dt)])
    return PathGrid(x[:: spec.substeps], 1.0 / spec.per_day)


def simulate_brownian(spec: SimSpec, rng: np.random.Generator | None = None) -> PathGrid:
    """Brownian driver on the grid of ``spec`` (its driver list is ignored)."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    n_sub = spec.n_obs * spec.substeps
    dt = 1.0 / (spec.per_day * spec.substeps)
    if spec.vol is not None:
        sigma = simulate_vol(spec.vol, np.arange(n_sub + 1) * dt, rng, spec.cutoff_eps)[:-1]
    else:
        sigma = np.ones(n_sub)
    dw = rng.normal(0.0, math.sqrt(dt), n_sub)
    x = np.concatenate([[0.0], np.cumsum(sigma * dw + spec.drift * dt)])
    return PathGrid(x[:: spec.substeps], 1.0 / spec.per_day)


def simulate_stable_levy(beta: float, n: int, rng: np.random.Generator) -> PathGrid:
    """Exact unit-normalized symmetric stable Levy path on ``[0, 1]`` with n steps."""
    dt = 1.0 / n
    inc = sample_symmetric_stable(beta, dt ** (1.0 / beta), rng, size=n)
    return PathGrid(np.concatenate([[0.0], np.cumsum(inc)]), dt)
