"""Constants of the locally stable limit law and symmetric stable sampling.

All routines use the *unit normalization*: the difference of two independent
copies of the limiting stable variable, ``D = S1 - S2``, has characteristic
function ``exp(-|u|**beta)``. The constant ``C(p, beta)`` is scale free, so
nothing downstream depends on this choice.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gamma

# Inputs closer than this to a pole of the gamma function are rejected.
POLE_GUARD = 1e-6
# Step of the central difference used for d C / d beta.
DBETA_STEP = 1e-5


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a routine."""


def check_beta(beta: float, *, allow_two: bool = True) -> float:
    beta = float(beta)
    if not (0.0 < beta <= 2.0) or (beta == 2.0 and not allow_two):
        raise DomainError(f"stability index must lie in (0, 2], got {beta!r}")
    return beta


def _check_moment(p: float, beta: float) -> None:
    if not p > 0.0:
        raise DomainError(f"power must be positive, got {p!r}")
    if p >= beta - POLE_GUARD:
        raise DomainError(
            f"moment does not exist: p={p!r} must be below beta={beta!r}"
        )
    if p >= 2.0 - POLE_GUARD:
        raise DomainError(f"p={p!r} hits the pole of Gamma(1 - p/2)")


def _bracket(p: float, beta: float) -> float:
    # No validation: also used at beta slightly above 2 by the finite difference.
    return (
        2.0**p
        * gamma((1.0 + p) / 2.0)
        * gamma(1.0 - p / beta)
        / (math.sqrt(math.pi) * gamma(1.0 - p / 2.0))
    )


def _c_const(p: float, beta: float) -> float:
    return _bracket(p, beta) ** (-beta / p)


def abs_moment_bracket(p: float, beta: float) -> float:
    """Return ``E|S1 - S2|**p`` under the unit normalization.

    Parameters
    ----------
    p : float
        Moment power, ``0 < p < beta``.
    beta : float
        Stability index in ``(0, 2]``.

    Returns
    -------
    float
        ``2**p Gamma((1+p)/2) Gamma(1-p/beta) / (sqrt(pi) Gamma(1-p/2))``.
    """
    beta = check_beta(beta)
    p = float(p)
    _check_moment(p, beta)
    return _bracket(p, beta)


def c_const(p: float, beta: float) -> float:
    """Scale-free constant of the self-normalized limit, ``bracket**(-beta/p)``."""
    beta = check_beta(beta)
    p = float(p)
    _check_moment(p, beta)
    return _c_const(p, beta)


def dc_dbeta(p: float, beta: float, h: float = DBETA_STEP) -> float:
    """Central-difference derivative of :func:`c_const` with respect to beta."""
    c_const(p, beta)
    return (_c_const(p, beta + h) - _c_const(p, beta - h)) / (2.0 * h)


def limit_cf(p: float, u, beta: float):
    """Limit of the self-normalized ECF, ``exp(-C(p, beta) * u**beta)``."""
    c = c_const(p, beta)
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise DomainError("u must be non-negative")
    out = np.exp(-c * u**beta)
    return float(out) if out.ndim == 0 else out


def g_weight(p: float, u, beta: float):
    """Sensitivity of the limit to the local scale estimate.

    ``G(p, u, beta) = (beta/p) * L(p, u, beta) * C * u**beta``.
    """
    c = c_const(p, beta)
    u = np.asarray(u, dtype=float)
    cu = c * u**beta
    out = (beta / p) * np.exp(-cu) * cu
    return float(out) if out.ndim == 0 else out


def h_weight(p: float, u, beta: float):
    """Second-order term driving the O(1/k_n) bias of the ECF.

    ``H = G * ((beta/p) C u**beta - beta/p - 1)``.
    """
    c = c_const(p, beta)
    u = np.asarray(u, dtype=float)
    cu = c * u**beta
    g = (beta / p) * np.exp(-cu) * cu
    out = g * ((beta / p) * cu - beta / p - 1.0)
    return float(out) if out.ndim == 0 else out


def dlog_limit_cf_dbeta(p: float, u, beta: float):
    """Derivative in beta of ``log L(p, u, beta) = -C u**beta``.

    Requires ``u > 0`` and ``p < beta < 2``.
    """
    beta = check_beta(beta, allow_two=False)
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise DomainError("u must be positive")
    c = c_const(p, beta)
    dc = dc_dbeta(p, beta)
    ub = u**beta
    out = -dc * ub - c * ub * np.log(u)
    return float(out) if out.ndim == 0 else out


def sample_symmetric_stable(beta: float, scale: float, rng: np.random.Generator, size=None):
    """Draw symmetric stable variates by the Chambers-Mallows-Stuck transform.

    The law has characteristic function ``exp(-(scale*|u|)**beta)``; for
    ``beta == 2`` that is ``Normal(0, 2*scale**2)`` and for ``beta == 1`` a
    Cauchy law with scale ``scale``.
    """
    beta = check_beta(beta)
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale!r}")
    if beta == 2.0:
        return rng.normal(0.0, math.sqrt(2.0) * scale, size=size)
    v = rng.uniform(-math.pi / 2, math.pi / 2, size=size)
    w = rng.exponential(size=size)
    return scale * cms_transform(beta, v, w)


def cms_transform(beta: float, v, w):
    """Map ``v ~ U(-pi/2, pi/2)`` and ``w ~ Exp(1)`` to a unit symmetric stable draw.

    Computation follows the dtype of ``v``.
    """
    if beta == 1.0:
        return np.tan(v)
    b = np.asarray(beta, dtype=np.asarray(v).dtype)
    return np.sin(b * v) / np.cos(v) ** (1 / b) * (np.cos((1 - b) * v) / w) ** ((1 - b) / b)
