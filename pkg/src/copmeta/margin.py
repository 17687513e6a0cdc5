"""Random-effect margins and link functions.

A margin maps a uniform quadrature node to a study-level success
probability. Normal margins live on a link scale (logit, probit or
cloglog); beta margins live on the probability scale with the identity
link, parameterized by mean ``pi`` and dispersion ``gamma`` so that
``Var = pi (1 - pi) gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import betainc, betaincinv, expit, logit, ndtr, ndtri
from scipy.stats import beta as beta_dist
from scipy.stats import norm


class LinkFn(str, Enum):
    LOGIT = "logit"
    PROBIT = "probit"
    CLOGLOG = "cloglog"
    IDENTITY = "identity"


class MarginKind(str, Enum):
    NORMAL = "normal"
    BETA = "beta"


def _out(x):
    x = np.asarray(x)
    return x.item() if x.ndim == 0 else x


def link_apply(link, x):
    link = LinkFn(link)
    x = np.asarray(x, dtype=float)
    if not np.all((x > 0.0) & (x < 1.0)):
        raise ValueError(f"{link.value} link needs arguments in (0, 1)")
    if link is LinkFn.LOGIT:
        return _out(logit(x))
    if link is LinkFn.PROBIT:
        return _out(ndtri(x))
    if link is LinkFn.CLOGLOG:
        return _out(np.log(-np.log1p(-x)))
    return _out(x)


def link_inverse(link, x):
    link = LinkFn(link)
    x = np.asarray(x, dtype=float)
    if link is LinkFn.LOGIT:
        return _out(expit(x))
    if link is LinkFn.PROBIT:
        return _out(ndtr(x))
    if link is LinkFn.CLOGLOG:
        return _out(-np.expm1(-np.exp(x)))
    if not np.all((x > 0.0) & (x < 1.0)):
        raise ValueError("identity link needs arguments in (0, 1)")
    return _out(x)


def link_derivative(link, p):
    """d l(p) / dp, used for change of variables onto the probability scale."""
    link = LinkFn(link)
    p = np.asarray(p, dtype=float)
    if link is LinkFn.LOGIT:
        return _out(1.0 / (p * (1.0 - p)))
    if link is LinkFn.PROBIT:
        return _out(1.0 / norm.pdf(ndtri(p)))
    if link is LinkFn.CLOGLOG:
        return _out(-1.0 / ((1.0 - p) * np.log1p(-p)))
    return _out(np.ones_like(p))


@dataclass(frozen=True)
class MarginSpec:
    kind: MarginKind = MarginKind.NORMAL
    link: LinkFn = LinkFn.LOGIT

    def __post_init__(self):
        kind = MarginKind(self.kind)
        link = LinkFn(self.link)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "link", link)
        if kind is MarginKind.BETA and link is not LinkFn.IDENTITY:
            raise ValueError("beta margins use the identity link")
        if kind is MarginKind.NORMAL and link is LinkFn.IDENTITY:
            raise ValueError("normal margins need a logit, probit or cloglog link")

    @classmethod
    def parse(cls, text: str) -> "MarginSpec":
        """Parse ``'normal'``, ``'normal-probit'`` or ``'beta'``."""
        kind, _, link = text.strip().lower().partition("-")
        if kind == "beta":
            return cls(MarginKind.BETA, LinkFn(link or "identity"))
        return cls(MarginKind(kind), LinkFn(link or "logit"))

    @property
    def name(self) -> str:
        if self.kind is MarginKind.BETA:
            return "beta"
        return f"normal-{self.link.value}"

    @property
    def delta_symbol(self) -> str:
        return "gamma" if self.kind is MarginKind.BETA else "sigma"


@dataclass(frozen=True)
class MarginParams:
    pi: float
    delta: float


def check_params(m: MarginSpec, p: MarginParams) -> None:
    if not 0.0 < p.pi < 1.0:
        raise ValueError(f"pi must be in (0, 1), got {p.pi}")
    if m.kind is MarginKind.NORMAL and not p.delta > 0.0:
        raise ValueError(f"sigma must be positive, got {p.delta}")
    if m.kind is MarginKind.BETA and not 0.0 < p.delta < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {p.delta}")


def beta_shapes(pi: float, gamma: float) -> tuple[float, float]:
    k = (1.0 - gamma) / gamma
    return pi * k, (1.0 - pi) * k


def quantile_to_prob(m: MarginSpec, p: MarginParams, u):
    """Success probability at quantile level ``u`` of the random effect."""
    u = np.asarray(u, dtype=float)
    if not np.all((u > 0.0) & (u < 1.0)):
        raise ValueError("u must lie strictly inside (0, 1)")
    return _out(_quantile_unchecked(m, p, u))


def _quantile_unchecked(m: MarginSpec, p: MarginParams, u):
    if m.kind is MarginKind.BETA:
        a, b = beta_shapes(p.pi, p.delta)
        return betaincinv(a, b, u)
    mu = link_apply(m.link, p.pi)
    return link_inverse(m.link, mu + p.delta * ndtri(u))


def prob_to_quantile(m: MarginSpec, p: MarginParams, x):
    """Margin cdf evaluated at a success probability, ``F(l(x); l(pi), delta)``."""
    x = np.asarray(x, dtype=float)
    if not np.all((x > 0.0) & (x < 1.0)):
        raise ValueError("x must lie strictly inside (0, 1)")
    if m.kind is MarginKind.BETA:
        a, b = beta_shapes(p.pi, p.delta)
        return _out(betainc(a, b, x))
    mu = link_apply(m.link, p.pi)
    return _out(ndtr((np.asarray(link_apply(m.link, x)) - mu) / p.delta))


def prob_density(m: MarginSpec, p: MarginParams, x):
    """Density of the random success probability on (0, 1)."""
    x = np.asarray(x, dtype=float)
    if m.kind is MarginKind.BETA:
        a, b = beta_shapes(p.pi, p.delta)
        return _out(beta_dist.pdf(x, a, b))
    if not np.all((x >= 0.0) & (x <= 1.0)):
        raise ValueError("x must lie in [0, 1]")
    # the normal-margin density vanishes at the endpoints
    inside = (x > 0.0) & (x < 1.0)
    xi = np.where(inside, x, 0.5)
    mu = link_apply(m.link, p.pi)
    z = (np.asarray(link_apply(m.link, xi)) - mu) / p.delta
    dens = norm.pdf(z) / p.delta * np.asarray(link_derivative(m.link, xi))
    return _out(np.where(inside, dens, 0.0))
