"""Parametric bivariate copulas used for the random-effects distribution.

Each family exposes its conditional distribution ``C(v|u) = dC(u, v)/du``,
the inverse of that conditional in either argument order, the density and
the one-to-one map between the natural parameter and Kendall's tau.

All functions accept numpy arrays and broadcast. Arguments must lie strictly
inside (0, 1); values on the boundary raise ``ValueError`` rather than being
clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, ndtr, ndtri

# Frank is evaluated on |theta| <= FRANK_THETA_MAX; below FRANK_THETA_MIN it is
# the independence copula.
FRANK_THETA_MAX = 50.0
FRANK_THETA_MIN = 1e-8
CLAYTON_THETA_MIN = 1e-10


class CopulaFamily(str, Enum):
    INDEPENDENCE = "independence"
    BVN = "bvn"
    FRANK = "frank"
    CLAYTON0 = "clayton0"
    CLAYTON90 = "clayton90"
    CLAYTON180 = "clayton180"
    CLAYTON270 = "clayton270"

    @classmethod
    def parse(cls, name) -> "CopulaFamily":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "").replace("-", "")
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise ValueError(f"unknown copula family {name!r}; expected one of {valid}") from None

    @property
    def is_clayton(self) -> bool:
        return self in _CLAYTONS


_ALIASES = {
    "indep": "independence",
    "normal": "bvn",
    "gaussian": "bvn",
    "clayton": "clayton0",
    "cln0": "clayton0",
    "cln90": "clayton90",
    "cln180": "clayton180",
    "cln270": "clayton270",
}
_CLAYTONS = frozenset(
    {CopulaFamily.CLAYTON0, CopulaFamily.CLAYTON90, CopulaFamily.CLAYTON180, CopulaFamily.CLAYTON270}
)


# ---------------------------------------------------------------------------
# Kendall's tau <-> theta
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1)
def _debye_rule():
    from .quadrature import gauss_legendre_01

    return gauss_legendre_01(50)


def _debye_integral(theta: float) -> float:
    """Integral of t / (e^t - 1) over (0, theta), signed for theta < 0."""
    rule = _debye_rule()
    t = theta * rule.nodes
    return theta * float(np.dot(rule.weights, t / np.expm1(t)))


def _frank_tau(theta: float) -> float:
    if abs(theta) < 1e-2:
        # series; avoids cancellation between 1 and 4/theta
        return theta / 9.0 - theta**3 / 900.0 + theta**5 / 52920.0
    return 1.0 - 4.0 / theta + 4.0 / theta**2 * _debye_integral(theta)


def tau_bounds(family: CopulaFamily) -> tuple[float, float]:
    """Open interval of Kendall's tau values the family can represent."""
    family = CopulaFamily.parse(family)
    if family is CopulaFamily.INDEPENDENCE:
        return (0.0, 0.0)
    if family is CopulaFamily.BVN:
        return (-1.0, 1.0)
    if family is CopulaFamily.FRANK:
        t = _frank_tau(FRANK_THETA_MAX)
        return (-t, t)
    if family in (CopulaFamily.CLAYTON0, CopulaFamily.CLAYTON180):
        return (0.0, 1.0)
    return (-1.0, 0.0)


def _check_theta(family: CopulaFamily, theta: float) -> None:
    if not np.isfinite(theta):
        raise ValueError(f"{family.value}: theta must be finite, got {theta}")
    if family is CopulaFamily.BVN and not -1.0 < theta < 1.0:
        raise ValueError(f"bvn: theta must be in (-1, 1), got {theta}")
    if family is CopulaFamily.FRANK and abs(theta) > FRANK_THETA_MAX:
        raise ValueError(f"frank: |theta| must be <= {FRANK_THETA_MAX}, got {theta}")
    if family.is_clayton and theta < 0.0:
        raise ValueError(f"{family.value}: theta must be positive, got {theta}")


def theta_to_tau(family, theta: float) -> float:
    family = CopulaFamily.parse(family)
    theta = float(theta)
    if family is CopulaFamily.INDEPENDENCE:
        return 0.0
    _check_theta(family, theta)
    if family is CopulaFamily.BVN:
        return 2.0 / math.pi * math.asin(theta)
    if family is CopulaFamily.FRANK:
        return _frank_tau(theta)
    tau = theta / (theta + 2.0)
    if family in (CopulaFamily.CLAYTON90, CopulaFamily.CLAYTON270):
        return -tau
    return tau


def tau_to_theta(family, tau: float) -> float:
    """Natural parameter with the given Kendall's tau.

    Frank has no closed form and is inverted numerically; a tau so close to
    zero that theta would fall below ``FRANK_THETA_MIN`` returns 0, which the
    density and conditional functions treat as independence.
    """
    family = CopulaFamily.parse(family)
    tau = float(tau)
    if family is CopulaFamily.INDEPENDENCE:
        if tau != 0.0:
            raise ValueError(f"independence copula has tau 0, got {tau}")
        return 0.0
    lo, hi = tau_bounds(family)
    if family.is_clayton:
        ok = lo <= tau < hi if lo == 0.0 else lo < tau <= hi
    else:
        ok = lo < tau < hi
    if not (ok and np.isfinite(tau)):
        raise ValueError(f"tau {tau} outside the attainable range ({lo}, {hi}) of {family.value}")
    if family is CopulaFamily.BVN:
        return math.sin(math.pi * tau / 2.0)
    if family is CopulaFamily.FRANK:
        if abs(tau) < FRANK_THETA_MIN / 9.0:
            return 0.0
        if tau > 0:
            a, b = FRANK_THETA_MIN, FRANK_THETA_MAX
        else:
            a, b = -FRANK_THETA_MAX, -FRANK_THETA_MIN
        return brentq(lambda t: _frank_tau(t) - tau, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    if family in (CopulaFamily.CLAYTON0, CopulaFamily.CLAYTON180):
        return 2.0 * tau / (1.0 - tau)
    return -2.0 * tau / (1.0 + tau)


@dataclass(frozen=True)
class CopulaSpec:
    """A copula family with its parameter, held on both scales."""

    family: CopulaFamily
    theta: float
    tau: float

    @classmethod
    def from_tau(cls, family, tau: float) -> "CopulaSpec":
        family = CopulaFamily.parse(family)
        return cls(family, tau_to_theta(family, tau), float(tau))

    @classmethod
    def from_theta(cls, family, theta: float) -> "CopulaSpec":
        family = CopulaFamily.parse(family)
        return cls(family, float(theta), theta_to_tau(family, theta))

    @classmethod
    def independence(cls) -> "CopulaSpec":
        return cls(CopulaFamily.INDEPENDENCE, 0.0, 0.0)

    @property
    def is_independence(self) -> bool:
        f = self.family
        if f is CopulaFamily.INDEPENDENCE:
            return True
        if f is CopulaFamily.FRANK:
            return abs(self.theta) < FRANK_THETA_MIN
        if f.is_clayton:
            return self.theta < CLAYTON_THETA_MIN
        return False


# ---------------------------------------------------------------------------
# elementwise helpers
# ---------------------------------------------------------------------------


def _open_unit(name, x):
    x = np.asarray(x, dtype=float)
    if not np.all((x > 0.0) & (x < 1.0)):
        raise ValueError(f"{name} must lie strictly inside (0, 1)")
    return x


def _log_expm1(x):
    """log(exp(x) - 1) for x > 0 without overflow."""
    x = np.asarray(x, dtype=float)
    big = x > 30.0
    safe = np.where(big, 1.0, x)
    return np.where(big, x + np.log1p(-np.exp(-np.where(big, x, 30.0))), np.log(np.expm1(safe)))


def _out(x):
    return x.item() if np.ndim(x) == 0 else x


# Clayton (unrotated), theta > 0. h(v|u) = dC/du.


def _clayton_h(theta, v, u):
    t = theta * np.log(u) + _log_expm1(-theta * np.log(v))
    return np.exp(-(1.0 + theta) / theta * np.logaddexp(0.0, t))


def _clayton_hinv(theta, q, u):
    s = _log_expm1(-theta / (1.0 + theta) * np.log(q)) - theta * np.log(u)
    return np.exp(-np.logaddexp(0.0, s) / theta)


def _clayton_logpdf(theta, u, v):
    lu, lv = np.log(u), np.log(v)
    log_sum = np.logaddexp(-theta * lu, _log_expm1(-theta * lv))
    return math.log1p(theta) - (1.0 + theta) * (lu + lv) - (2.0 + 1.0 / theta) * log_sum


# Frank, theta != 0.


def _log_abs_expm1(x):
    """log|exp(x) - 1| for x != 0."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0.0, x + np.log(-np.expm1(-np.abs(x))), np.log(-np.expm1(-np.abs(x))))


def _frank_h(theta, v, u):
    # h = 1 / (1 + R) with log R assembled from same-signed expm1 terms
    log_r = theta * (u - v) + _log_abs_expm1(-theta * (1.0 - v)) - _log_abs_expm1(-theta * v)
    return expit(-log_r)


def _frank_hinv(theta, q, u):
    # log-sum-exp form stays finite for large |theta| and q near 0 or 1
    lr = np.log1p(-q) - np.log(q) - theta * u
    return (np.logaddexp(lr, 0.0) - np.logaddexp(lr, -theta)) / theta


def _frank_logpdf(theta, u, v):
    # |expm1(-theta) + expm1(-theta u) expm1(-theta v)| written as a sum of positive terms
    if theta > 0.0:
        log_d = np.logaddexp(-theta * u + _log_abs_expm1(-theta * v),
                             -theta * v + _log_abs_expm1(-theta * (1.0 - v)))
    else:
        log_d = np.logaddexp(_log_abs_expm1(-theta * u) + _log_abs_expm1(-theta * v),
                             _log_abs_expm1(-theta))
    log_c = math.log(abs(theta)) + float(_log_abs_expm1(-theta))
    return log_c - theta * (u + v) - 2.0 * log_d


# BVN, |theta| < 1.


def _bvn_h(theta, v, u):
    return ndtr((ndtri(v) - theta * ndtri(u)) / math.sqrt(1.0 - theta * theta))


def _bvn_hinv(theta, q, u):
    return ndtr(math.sqrt(1.0 - theta * theta) * ndtri(q) + theta * ndtri(u))


def _bvn_logpdf(theta, u, v):
    x, y = ndtri(u), ndtri(v)
    r2 = 1.0 - theta * theta
    return -0.5 * math.log(r2) - (theta * theta * (x * x + y * y) - 2.0 * theta * x * y) / (2.0 * r2)


_BASE = {
    CopulaFamily.BVN: (_bvn_h, _bvn_hinv, _bvn_logpdf),
    CopulaFamily.FRANK: (_frank_h, _frank_hinv, _frank_logpdf),
    CopulaFamily.CLAYTON0: (_clayton_h, _clayton_hinv, _clayton_logpdf),
}


def _dispatch(spec: CopulaSpec):
    fam = spec.family
    if fam.is_clayton:
        return _BASE[CopulaFamily.CLAYTON0]
    return _BASE[fam]


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def cond_cdf_2given1(spec: CopulaSpec, v, u):
    """Conditional cdf of the second variable given the first, C(v|u)."""
    v = _open_unit("v", v)
    u = _open_unit("u", u)
    if spec.is_independence:
        return _out(np.broadcast_to(v, np.broadcast(u, v).shape).copy())
    h, _, _ = _dispatch(spec)
    th = spec.theta
    fam = spec.family
    if fam is CopulaFamily.CLAYTON90:
        out = h(th, v, 1.0 - u)
    elif fam is CopulaFamily.CLAYTON180:
        out = 1.0 - h(th, 1.0 - v, 1.0 - u)
    elif fam is CopulaFamily.CLAYTON270:
        out = 1.0 - h(th, 1.0 - v, u)
    else:
        out = h(th, v, u)
    return _out(np.asarray(out))


def cond_inverse_2given1(spec: CopulaSpec, v, u):
    """Inverse in ``v`` of C(v|u): the value w with C(w|u) = v."""
    v = _open_unit("v", v)
    u = _open_unit("u", u)
    if spec.is_independence:
        return _out(np.broadcast_to(v, np.broadcast(u, v).shape).copy())
    _, hinv, _ = _dispatch(spec)
    th = spec.theta
    fam = spec.family
    if fam is CopulaFamily.CLAYTON90:
        out = hinv(th, v, 1.0 - u)
    elif fam is CopulaFamily.CLAYTON180:
        out = 1.0 - hinv(th, 1.0 - v, 1.0 - u)
    elif fam is CopulaFamily.CLAYTON270:
        out = 1.0 - hinv(th, 1.0 - v, u)
    else:
        out = hinv(th, v, u)
    return _out(np.asarray(out))


def _transpose(spec: CopulaSpec) -> CopulaSpec:
    # Swapping the arguments of Clayton-90 gives Clayton-270 and vice versa;
    # every other family here is exchangeable.
    swap = {CopulaFamily.CLAYTON90: CopulaFamily.CLAYTON270, CopulaFamily.CLAYTON270: CopulaFamily.CLAYTON90}
    if spec.family in swap:
        return CopulaSpec(swap[spec.family], spec.theta, spec.tau)
    return spec


def cond_cdf_1given2(spec: CopulaSpec, u, v):
    """Conditional cdf of the first variable given the second, dC(u, v)/dv."""
    return cond_cdf_2given1(_transpose(spec), u, v)


def cond_inverse_1given2(spec: CopulaSpec, q, v):
    """The value u with dC(u, v)/dv = q."""
    return cond_inverse_2given1(_transpose(spec), q, v)


def log_density(spec: CopulaSpec, u, v):
    u = _open_unit("u", u)
    v = _open_unit("v", v)
    if spec.is_independence:
        return _out(np.zeros(np.broadcast(u, v).shape))
    _, _, logpdf = _dispatch(spec)
    th = spec.theta
    fam = spec.family
    if fam is CopulaFamily.CLAYTON90:
        out = logpdf(th, 1.0 - u, v)
    elif fam is CopulaFamily.CLAYTON180:
        out = logpdf(th, 1.0 - u, 1.0 - v)
    elif fam is CopulaFamily.CLAYTON270:
        out = logpdf(th, u, 1.0 - v)
    else:
        out = logpdf(th, u, v)
    return _out(np.asarray(out))


def density(spec: CopulaSpec, u, v):
    """Copula density c(u, v)."""
    return _out(np.exp(np.asarray(log_density(spec, u, v))))
