"""Covariance kernels, optimal weights and asymptotic variances.

The kernels are second moments of ``xi(u) = (cos(u Z) - L(u), |Z|**p - 1)``
where ``Z`` is a unit-normalized stable difference ``S1 - S2`` scaled so that
``E|Z|**p = 1``. Entries with a closed form are computed exactly; the rest
come from a seeded Monte Carlo over ``(S1, S2, S3)`` triples that is shared by
every ``(u, v)`` node (common random numbers), see :class:`KernelTable`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .stable_law import (
    DomainError,
    abs_moment_bracket,
    c_const,
    check_beta,
    dlog_limit_cf_dbeta,
    g_weight,
    h_weight,
    limit_cf,
    cms_transform,
)

KERNEL_SEED = 20150417
KERNEL_DRAWS = 2_000_000
GAUSS_NODES = 16
_CHUNK = 1 << 13

KINDS = ("Xi0", "Xi1", "XiBar")


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Weight matrix failed the positive-definiteness check."""

    def __init__(self, eigenvalue: float):
        super().__init__(f"weight matrix is not positive definite (min eigenvalue {eigenvalue:.6g})")
        self.eigenvalue = eigenvalue


@dataclass(frozen=True)
class CovKernel:
    m: np.ndarray
    u: float
    v: float
    kind: str


@dataclass(frozen=True)
class MomentBands:
    """K disjoint intervals ``[lows[i], highs[i]]`` of ECF arguments."""

    lows: tuple
    highs: tuple

    def __post_init__(self):
        lows = tuple(float(x) for x in self.lows)
        highs = tuple(float(x) for x in self.highs)
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)
        if len(lows) != len(highs) or not lows:
            raise ValueError("bands need matching, non-empty lows and highs")
        for lo, hi in zip(lows, highs):
            if not 0.0 < lo < hi:
                raise ValueError(f"invalid band [{lo}, {hi}]")
        order = sorted(range(len(lows)), key=lows.__getitem__)
        for a, b in zip(order, order[1:]):
            if highs[a] > lows[b]:
                raise ValueError("bands overlap")

    @property
    def k(self) -> int:
        return len(self.lows)

    def nodes(self, n: int = GAUSS_NODES):
        """Gauss-Legendre nodes and weights, each of shape ``(K, n)``."""
        x, w = np.polynomial.legendre.leggauss(n)
        lo = np.asarray(self.lows)[:, None]
        hi = np.asarray(self.highs)[:, None]
        half = (hi - lo) / 2.0
        return lo + half * (x[None, :] + 1.0), half * w[None, :]


@dataclass(frozen=True)
class WeightMatrix:
    w: np.ndarray
    min_eigenvalue: float


@lru_cache(maxsize=1)
def _base_draws(seed: int, draws: int):
    """Float32 uniforms, exponentials and normals shared by every kernel table."""
    rng = np.random.default_rng(seed)
    edge = np.nextafter(np.float32(np.pi / 2), np.float32(0))
    v = np.clip(rng.uniform(-np.pi / 2, np.pi / 2, (3, draws)).astype(np.float32), -edge, edge)
    w = rng.standard_exponential((3, draws), dtype=np.float32)
    g = rng.standard_normal((3, draws), dtype=np.float32)
    for arr in (v, w, g):
        arr.flags.writeable = False
    return v, w, g


def _check_kernel_power(p: float, beta: float) -> None:
    if not 0.0 < p < beta / 2.0:
        raise DomainError(f"kernels need 0 < p < beta/2, got p={p!r}, beta={beta!r}")


def _xi0_11(p, u, v, beta):
    return 0.5 * (limit_cf(p, u + v, beta) + limit_cf(p, abs(u - v), beta)) - limit_cf(
        p, u, beta
    ) * limit_cf(p, v, beta)


def _xi1_11(p, u, v, beta):
    c = c_const(p, beta)
    ub, vb = u**beta, v**beta
    return 0.5 * (
        math.exp(-0.5 * c * (ub + abs(u - v) ** beta + vb))
        + math.exp(-0.5 * c * (ub + (u + v) ** beta + vb))
    ) - limit_cf(p, u, beta) * limit_cf(p, v, beta)


def _xi0_22(p, beta):
    return abs_moment_bracket(2 * p, beta) / abs_moment_bracket(p, beta) ** 2 - 1.0


class KernelTable:
    """Monte Carlo kernel entries for one ``(p, beta, seed, draws)`` key.

    Draws are generated lazily and reused for every ``(u, v)`` request, so
    two tables with the same key agree bitwise.
    """

    def __init__(self, p: float, beta: float, seed: int = KERNEL_SEED, draws: int = KERNEL_DRAWS):
        beta = check_beta(beta)
        _check_kernel_power(p, beta)
        self.p, self.beta, self.seed, self.draws = float(p), beta, int(seed), int(draws)
        self._entries: dict = {}
        self._z = None
        self._xi1_22 = None

    @property
    def key(self):
        return (self.p, self.beta, self.seed, self.draws)

    def _sample(self):
        if self._z is None:
            v, w, g = _base_draws(self.seed, self.draws)
            # each S_i carries half the unit exponent, so S1 - S2 has cf exp(-|u|^beta)
            if self.beta == 2.0:
                s = g
            else:
                with np.errstate(divide="ignore"):
                    s = cms_transform(self.beta, v, w) * np.float32(2.0 ** (-1.0 / self.beta))
            norm = abs_moment_bracket(self.p, self.beta) ** (1.0 / self.p)
            z12 = (s[0] - s[1]).astype(float) / norm
            z23 = (s[1] - s[2]).astype(float) / norm
            a12 = np.abs(z12) ** self.p - 1.0
            a23 = np.abs(z23) ** self.p - 1.0
            pair = np.stack([a12, a23], axis=1).astype(np.float32)
            self._z = (z12.astype(np.float32), z23.astype(np.float32), a12, a23, pair,
                       np.ascontiguousarray(pair[:, 0]))
        return self._z

    @property
    def xi0_22(self) -> float:
        return _xi0_22(self.p, self.beta)

    @property
    def xi1_22(self) -> float:
        if self._xi1_22 is None:
            _, _, a12, a23, _, _ = self._sample()
            self._xi1_22 = float(np.dot(a12, a23) / self.draws)
        return self._xi1_22

    @property
    def xi_bar_22(self) -> float:
        return self.xi0_22 + 2.0 * self.xi1_22

    def cross_terms(self, us):
        """MC estimates of the cross entries at each u.

        Returns ``(g0, h, h_rev)`` with ``g0(u) = E[(cos(uZ12)-L) a12]``,
        ``h(u) = E[(cos(uZ12)-L) a23]`` and ``h_rev(u) = E[a12 (cos(uZ23)-L)]``
        where ``a = |Z|**p - 1``.
        """
        us = np.atleast_1d(np.asarray(us, dtype=float))
        z12, z23, a12, a23, pair, a12_32 = self._sample()
        u32 = us.astype(np.float32)[:, None]
        acc12 = np.zeros((us.size, 2))
        acc23 = np.zeros(us.size)
        buf = np.empty((us.size, _CHUNK), dtype=np.float32)
        for lo in range(0, self.draws, _CHUNK):
            sl = slice(lo, lo + _CHUNK)
            b = buf[:, : min(_CHUNK, self.draws - lo)]
            np.multiply(u32, z12[sl], out=b)
            acc12 += np.cos(b, out=b) @ pair[sl]
            np.multiply(u32, z23[sl], out=b)
            acc23 += np.cos(b, out=b) @ a12_32[sl]
        n = self.draws
        lu = np.exp(-c_const(self.p, self.beta) * us**self.beta)
        m12, m23 = a12.mean(), a23.mean()
        g0 = acc12[:, 0] / n - lu * m12
        h = acc12[:, 1] / n - lu * m23
        h_rev = acc23 / n - lu * m12
        return g0, h, h_rev

    def entry(self, u: float, v: float, kind: str) -> np.ndarray:
        if kind not in KINDS:
            raise ValueError(f"unknown kernel kind {kind!r}")
        key = (float(u), float(v), kind)
        if key in self._entries:
            return self._entries[key].copy()
        if kind == "XiBar":
            m = self.entry(u, v, "Xi0") + 2.0 * self.entry(u, v, "Xi1")
        else:
            g0, h, h_rev = self.cross_terms([u, v])
            p, beta = self.p, self.beta
            if kind == "Xi0":
                m = np.array([[_xi0_11(p, u, v, beta), g0[0]], [g0[1], self.xi0_22]])
            else:
                m = np.array([[_xi1_11(p, u, v, beta), h[0]], [h_rev[1], self.xi1_22]])
        self._entries[key] = m
        return m.copy()

    def to_csv(self, path) -> None:
        """Write evaluated entries as ``u,v,kind,entry,value`` rows."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(f"# p={self.p!r},beta={self.beta!r},seed={self.seed},draws={self.draws}\n")
            writer = csv.writer(fh)
            writer.writerow(["u", "v", "kind", "entry", "value"])
            for (u, v, kind), m in sorted(self._entries.items()):
                for idx, val in enumerate(m.ravel()):
                    writer.writerow([repr(u), repr(v), kind, idx, format(val, ".17g")])

    @classmethod
    def from_csv(cls, path) -> "KernelTable":
        path = Path(path)
        with path.open() as fh:
            head = fh.readline().lstrip("#").strip()
            meta = dict(item.split("=") for item in head.split(","))
            table = cls(float(meta["p"]), float(meta["beta"]), int(meta["seed"]), int(meta["draws"]))
            rows = list(csv.DictReader(fh))
        for row in rows:
            key = (float(row["u"]), float(row["v"]), row["kind"])
            m = table._entries.setdefault(key, np.zeros((2, 2)))
            m.ravel()[int(row["entry"])] = float(row["value"])
        return table


@lru_cache(maxsize=3)
def kernel_table(p: float, beta: float, seed: int = KERNEL_SEED, draws: int = KERNEL_DRAWS) -> KernelTable:
    return KernelTable(p, beta, seed, draws)


def _table(p, beta, table):
    if table is None:
        return kernel_table(float(p), float(beta))
    if (table.p, table.beta) != (float(p), float(beta)):
        raise ValueError("kernel table key does not match (p, beta)")
    return table


def xi0(p: float, u: float, v: float, beta: float, table: KernelTable | None = None) -> CovKernel:
    """Contemporaneous kernel ``E[xi(u; Z12) xi(v; Z12)']``."""
    t = _table(p, beta, table)
    return CovKernel(t.entry(u, v, "Xi0"), float(u), float(v), "Xi0")


def xi1(p: float, u: float, v: float, beta: float, table: KernelTable | None = None) -> CovKernel:
    """Lag-one kernel ``E[xi(u; S1-S2) xi(v; S2-S3)']``."""
    t = _table(p, beta, table)
    return CovKernel(t.entry(u, v, "Xi1"), float(u), float(v), "Xi1")


def xi_bar(p: float, u: float, v: float, beta: float, table: KernelTable | None = None) -> CovKernel:
    t = _table(p, beta, table)
    return CovKernel(t.entry(u, v, "XiBar"), float(u), float(v), "XiBar")


def bias_constant(p: float, beta: float, k_n: int, u, table: KernelTable | None = None):
    """O(1/k_n) bias of the ECF caused by sampling error in the local scale."""
    if int(k_n) != k_n or k_n < 2:
        raise DomainError(f"k_n must be an integer >= 2, got {k_n!r}")
    t = _table(p, beta, table)
    return h_weight(p, u, beta) * t.xi_bar_22 / (2.0 * k_n)


def _w_integrand(p, us, beta, table):
    """``w(u, v)`` on the outer product of the node vector ``us``."""
    lu = limit_cf(p, us, beta)
    gu = g_weight(p, us, beta)
    c = c_const(p, beta)
    ub = us**beta
    uu, vv = us[:, None], us[None, :]
    ubu, ubv = ub[:, None], ub[None, :]
    lprod = lu[:, None] * lu[None, :]
    xi11 = (
        0.5 * (np.exp(-c * (uu + vv) ** beta) + np.exp(-c * np.abs(uu - vv) ** beta))
        - lprod
        + np.exp(-0.5 * c * (ubu + np.abs(uu - vv) ** beta + ubv))
        + np.exp(-0.5 * c * (ubu + (uu + vv) ** beta + ubv))
        - 2.0 * lprod
    )
    g0, h, h_rev = table.cross_terms(us)
    # exchangeability (S1,S2,S3) -> (S3,S2,S1) makes h and h_rev the same function
    gbar = g0 + (h + h_rev)
    gg = gu[:, None] * gu[None, :]
    num = xi11 + gbar[:, None] * gu[None, :] + gu[:, None] * gbar[None, :] + gg * table.xi_bar_22
    return num / lprod


def weight_matrix(p: float, bands: MomentBands, beta: float, table: KernelTable | None = None) -> WeightMatrix:
    """Asymptotic covariance of the band-integrated log-ECF moments."""
    t = _table(p, beta, table)
    nodes, weights = bands.nodes()
    us, qs = nodes.ravel(), weights.ravel()
    w = _w_integrand(p, us, beta, t) * qs[:, None] * qs[None, :]
    k, n = nodes.shape
    mat = w.reshape(k, n, k, n).sum(axis=(1, 3))
    mat = 0.5 * (mat + mat.T)
    eig = float(np.linalg.eigvalsh(mat)[0])
    if not eig > 0.0:
        raise NotPositiveDefiniteError(eig)
    return WeightMatrix(mat, eig)


def sensitivity_vector(p: float, bands: MomentBands, beta: float) -> np.ndarray:
    """Band integrals of ``d/d beta log L(p, u, beta)``."""
    nodes, weights = bands.nodes()
    return (dlog_limit_cf_dbeta(p, nodes, beta) * weights).sum(axis=1)


def avar_gmm(p: float, bands: MomentBands, beta: float, table: KernelTable | None = None) -> float:
    """Asymptotic variance of ``sqrt(n) (beta_hat - beta)``: ``1 / (M' W^-1 M)``."""
    w = weight_matrix(p, bands, beta, table).w
    m = sensitivity_vector(p, bands, beta)
    return float(1.0 / (m @ np.linalg.solve(w, m)))


@lru_cache(maxsize=8)
def gaussian_kernels(p: float, seed: int = KERNEL_SEED, draws: int = KERNEL_DRAWS):
    """Kernels of the jump-diffusion limit, driven by standard normal triples.

    The first component of each score is ``(|S_i - S_j|**4 - 12) / mu**2`` with
    ``mu = 1 / C(p, 2)``; the second is the normalized p-th power.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"Gaussian kernels need 0 < p < 1, got {p!r}")
    mu = 1.0 / c_const(p, 2.0)
    b = abs_moment_bracket(p, 2.0)
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((3, draws))
    z12, z23 = s[0] - s[1], s[1] - s[2]
    f12, f23 = (z12**4 - 12.0) / mu**2, (z23**4 - 12.0) / mu**2
    a12, a23 = np.abs(z12) ** p / b - 1.0, np.abs(z23) ** p / b - 1.0
    x0 = np.array(
        [
            [1536.0 / mu**4, np.mean(f12 * a12)],
            [np.mean(a12 * f12), _xi0_22(p, 2.0)],
        ]
    )
    x1 = np.array(
        [
            [np.mean(f12 * f23), np.mean(f12 * a23)],
            [np.mean(a12 * f23), np.mean(a12 * a23)],
        ]
    )
    return x0, x1
