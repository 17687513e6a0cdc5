"""Hybrid copula mixed-model likelihood.

Case-control studies contribute a bivariate integral over the (sensitivity,
specificity) random effects; cohort studies contribute a trivariate integral
that also covers disease prevalence, with the three random effects joined by
a C-vine truncated after its first tree. Both integrals are evaluated by
Gauss-Legendre sums over dependent node grids.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .copula import CopulaFamily, CopulaSpec
from .margin import MarginParams, MarginSpec, _quantile_unchecked, check_params
from .quadrature import (
    DEFAULT_NQ,
    DependentNodes2,
    DependentNodes3,
    QuadRule,
    conditional_grid,
    dependent_nodes_bivariate,
    gauss_legendre_01,
)

PROB_CLAMP = 1e-12


class Design(str, Enum):
    CASE_CONTROL = "cc"
    COHORT = "cohort"


@dataclass(frozen=True)
class StudyRecord:
    """Counts from one study.

    ``y1`` true positives out of ``n1`` diseased, ``y2`` true negatives out of
    ``n2`` non-diseased. Cohort studies also inform prevalence, with ``n1``
    diseased out of ``n1 + n2``.
    """

    design: Design
    y1: int
    n1: int
    y2: int
    n2: int
    study_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "design", Design(self.design))
        for name in ("y1", "n1", "y2", "n2"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.y1 > self.n1:
            raise ValueError(f"y1={self.y1} exceeds n1={self.n1}")
        if self.y2 > self.n2:
            raise ValueError(f"y2={self.y2} exceeds n2={self.n2}")
        if self.n1 + self.n2 < 1:
            raise ValueError("study has no participants")

    @property
    def y3(self) -> int:
        return self.n1

    @property
    def n3(self) -> int:
        return self.n1 + self.n2


@dataclass(frozen=True)
class Dataset:
    studies: tuple[StudyRecord, ...]
    n_resampled: int = 0

    def __post_init__(self):
        object.__setattr__(self, "studies", tuple(self.studies))
        if not self.studies:
            raise ValueError("dataset has no studies")

    def __len__(self):
        return len(self.studies)

    @property
    def case_control(self) -> tuple[StudyRecord, ...]:
        return tuple(s for s in self.studies if s.design is Design.CASE_CONTROL)

    @property
    def cohort(self) -> tuple[StudyRecord, ...]:
        return tuple(s for s in self.studies if s.design is Design.COHORT)

    @property
    def n_case_control(self) -> int:
        return len(self.case_control)

    @property
    def n_cohort(self) -> int:
        return len(self.cohort)

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for s in self.studies:
            h.update(f"{s.design.value},{s.y1},{s.n1},{s.y2},{s.n2};".encode())
        return h.hexdigest()[:16]

    @cached_property
    def _cc_counts(self):
        return _Counts.bivariate(self.case_control)

    @cached_property
    def _cohort_counts(self):
        return _Counts.trivariate(self.cohort)


@dataclass(frozen=True, eq=False)
class _Counts:
    """Per-component count arrays with precomputed log binomial coefficients."""

    y: np.ndarray  # (n_components, n_studies)
    n: np.ndarray
    logc: np.ndarray

    @classmethod
    def _build(cls, y, n):
        y = np.asarray(y, dtype=float).reshape(len(y), -1)
        n = np.asarray(n, dtype=float).reshape(len(n), -1)
        logc = gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
        return cls(y, n, logc)

    @classmethod
    def bivariate(cls, studies):
        return cls._build([[s.y1 for s in studies], [s.y2 for s in studies]],
                          [[s.n1 for s in studies], [s.n2 for s in studies]])

    @classmethod
    def trivariate(cls, studies):
        return cls._build(
            [[s.y1 for s in studies], [s.y2 for s in studies], [s.y3 for s in studies]],
            [[s.n1 for s in studies], [s.n2 for s in studies], [s.n3 for s in studies]],
        )


PERMUTATIONS = ("12,13,23|1", "12,23,13|2", "13,23,12|3")
_PERM_ALIASES = {"1": PERMUTATIONS[0], "2": PERMUTATIONS[1], "3": PERMUTATIONS[2]}
# root component, then (other component, root is the copula's first argument)
# for the two first-tree edges; components are 0=sens, 1=spec, 2=prev
_VINE_LAYOUT = {
    PERMUTATIONS[0]: (0, (1, True), (2, True)),
    PERMUTATIONS[1]: (1, (0, False), (2, True)),
    PERMUTATIONS[2]: (2, (0, False), (1, False)),
}


def _parse_family(value):
    return None if value is None else CopulaFamily.parse(value)


@dataclass(frozen=True)
class ModelSpec:
    """Margin, copula families and quadrature size of a hybrid model.

    ``cop12`` and ``cop13`` name the copulas on the two first-tree edges of
    the vine for cohort studies. Under the default permutation these are the
    (sens, spec) and (sens, prev) pairs; under ``12,23,13|2`` they are (sens,
    spec) and (spec, prev); under ``13,23,12|3`` they are (sens, prev) and
    (spec, prev). A block whose copula is ``None`` is absent from the model.
    """

    margin: MarginSpec = field(default_factory=MarginSpec)
    cop_cc: Optional[CopulaFamily] = CopulaFamily.BVN
    cop12: Optional[CopulaFamily] = CopulaFamily.BVN
    cop13: Optional[CopulaFamily] = CopulaFamily.BVN
    permutation: str = PERMUTATIONS[0]
    n_q: int = DEFAULT_NQ

    def __post_init__(self):
        object.__setattr__(self, "cop_cc", _parse_family(self.cop_cc))
        object.__setattr__(self, "cop12", _parse_family(self.cop12))
        object.__setattr__(self, "cop13", _parse_family(self.cop13))
        perm = _PERM_ALIASES.get(str(self.permutation), str(self.permutation).replace(" ", ""))
        if perm not in PERMUTATIONS:
            raise ValueError(f"unknown vine permutation {self.permutation!r}; expected one of {PERMUTATIONS}")
        object.__setattr__(self, "permutation", perm)
        if (self.cop12 is None) != (self.cop13 is None):
            raise ValueError("cop12 and cop13 must both be set or both be None")
        if self.cop_cc is None and self.cop12 is None:
            raise ValueError("model has neither a case-control nor a cohort block")
        if not isinstance(self.margin, MarginSpec):
            raise ValueError("margin must be a MarginSpec")

    @property
    def has_cc(self) -> bool:
        return self.cop_cc is not None

    @property
    def has_cohort(self) -> bool:
        return self.cop12 is not None

    @property
    def name(self) -> str:
        cops = ",".join("-" if c is None else c.value for c in (self.cop_cc, self.cop12, self.cop13))
        return f"{self.margin.name}/{cops}"

    def independence(self) -> "ModelSpec":
        """The same model with every present copula replaced by independence."""
        ind = CopulaFamily.INDEPENDENCE
        return replace(
            self,
            cop_cc=ind if self.has_cc else None,
            cop12=ind if self.has_cohort else None,
            cop13=ind if self.has_cohort else None,
        )

    def to_dict(self) -> dict:
        return {
            "margin": self.margin.kind.value,
            "link": self.margin.link.value,
            "cop_cc": None if self.cop_cc is None else self.cop_cc.value,
            "cop12": None if self.cop12 is None else self.cop12.value,
            "cop13": None if self.cop13 is None else self.cop13.value,
            "permutation": self.permutation,
            "n_q": self.n_q,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            margin=MarginSpec(d["margin"], d["link"]),
            cop_cc=d["cop_cc"],
            cop12=d["cop12"],
            cop13=d["cop13"],
            permutation=d["permutation"],
            n_q=int(d["n_q"]),
        )


PARAM_NAMES = ("pi1", "pi2", "pi3", "delta1", "delta2", "delta3", "tau_cc", "tau12", "tau13")


@dataclass(frozen=True)
class ParamSet:
    """Model parameters on their natural scales.

    ``delta`` is sigma for normal margins and gamma for beta margins;
    dependence is expressed through Kendall's tau. Parameters of a block that
    the model lacks are ``None``.
    """

    pi1: Optional[float] = None
    pi2: Optional[float] = None
    pi3: Optional[float] = None
    delta1: Optional[float] = None
    delta2: Optional[float] = None
    delta3: Optional[float] = None
    tau_cc: Optional[float] = None
    tau12: Optional[float] = None
    tau13: Optional[float] = None

    def margin_params(self, j: int) -> MarginParams:
        return MarginParams(getattr(self, f"pi{j + 1}"), getattr(self, f"delta{j + 1}"))

    def as_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "ParamSet":
        return replace(self, **kw)


def validate_params(params: ParamSet, spec: ModelSpec) -> None:
    need = [0, 1] + ([2] if spec.has_cohort else [])
    for j in need:
        mp = params.margin_params(j)
        if mp.pi is None or mp.delta is None:
            raise ValueError(f"missing margin parameters for component {j + 1}")
        try:
            check_params(spec.margin, mp)
        except ValueError as exc:
            raise ValueError(f"component {j + 1}: {exc}") from None
    for name, fam in (("tau_cc", spec.cop_cc), ("tau12", spec.cop12), ("tau13", spec.cop13)):
        if fam is None or fam is CopulaFamily.INDEPENDENCE:
            continue
        if getattr(params, name) is None:
            raise ValueError(f"missing {name}")


def copula_of(spec: ModelSpec, params: ParamSet, which: str) -> CopulaSpec:
    fam = {"cc": spec.cop_cc, "12": spec.cop12, "13": spec.cop13}[which]
    if fam is None:
        raise ValueError(f"model has no {which} copula")
    if fam is CopulaFamily.INDEPENDENCE:
        return CopulaSpec.independence()
    tau = getattr(params, "tau_cc" if which == "cc" else f"tau{which}")
    return CopulaSpec.from_tau(fam, tau)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def binom_logpmf(y, n, p):
    """Log binomial pmf; ``y = n = 0`` gives 0."""
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any(y < 0) or np.any(y > n):
        raise ValueError("binomial count must satisfy 0 <= y <= n")
    p = np.asarray(p, dtype=float)
    out = gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
    out = out + np.where(y > 0, y * np.log(np.where(y > 0, p, 1.0)), 0.0)
    out = out + np.where(n - y > 0, (n - y) * np.log1p(-np.where(n - y > 0, p, 0.0)), 0.0)
    return out.item() if out.ndim == 0 else out


def _prob_grid(margin: MarginSpec, mp: MarginParams, u):
    return np.clip(_quantile_unchecked(margin, mp, u), PROB_CLAMP, 1.0 - PROB_CLAMP)


def _log_binom_grid(counts: _Counts, j: int, prob):
    """log g(y_ij; n_ij, prob) for every study i, broadcast over ``prob``."""
    extra = (None,) * prob.ndim
    idx = (slice(None),) + extra
    y = counts.y[j][idx]
    n = counts.n[j][idx]
    return counts.logc[j][idx] + y * np.log(prob) + (n - y) * np.log1p(-prob)


def _log_wsum(logv, weights, axis=-1):
    """log of sum_q w_q exp(logv[..., q]) along ``axis`` with max-shifting."""
    m = np.max(logv, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shape = [1] * logv.ndim
    shape[axis] = -1
    s = np.sum(np.reshape(weights, shape) * np.exp(logv - m), axis=axis)
    return np.log(s) + np.squeeze(m, axis=axis)


def _bivariate_block(counts: _Counts, params: ParamSet, spec: ModelSpec, dn2: DependentNodes2, rule: QuadRule):
    p1 = _prob_grid(spec.margin, params.margin_params(0), dn2.u1_grid)
    p2 = _prob_grid(spec.margin, params.margin_params(1), dn2.u2_given_u1)
    lg1 = _log_binom_grid(counts, 0, p1)  # (N, q1)
    lg2 = _log_binom_grid(counts, 1, p2)  # (N, q1, q2)
    inner = _log_wsum(lg2, rule.weights, axis=2)
    return _log_wsum(lg1 + inner, rule.weights, axis=1)


def _vine_grids(rule: QuadRule, spec: ModelSpec, params: ParamSet):
    root, (a, a_first), (b, b_first) = _VINE_LAYOUT[spec.permutation]
    grid_a = conditional_grid(rule, copula_of(spec, params, "12"), root_first=a_first)
    grid_b = conditional_grid(rule, copula_of(spec, params, "13"), root_first=b_first)
    return root, (a, grid_a), (b, grid_b)


def _trivariate_block(counts: _Counts, params: ParamSet, spec: ModelSpec, rule: QuadRule, grids=None):
    root, (a, grid_a), (b, grid_b) = grids if grids is not None else _vine_grids(rule, spec, params)
    m = spec.margin
    lg_r = _log_binom_grid(counts, root, _prob_grid(m, params.margin_params(root), rule.nodes))
    lg_a = _log_binom_grid(counts, a, _prob_grid(m, params.margin_params(a), grid_a))
    lg_b = _log_binom_grid(counts, b, _prob_grid(m, params.margin_params(b), grid_b))
    # the two leaves are independent given the root, so the triple sum factorizes
    inner = _log_wsum(lg_a, rule.weights, axis=2) + _log_wsum(lg_b, rule.weights, axis=2)
    return _log_wsum(lg_r + inner, rule.weights, axis=1)


# ---------------------------------------------------------------------------
# public evaluation
# ---------------------------------------------------------------------------


def loglik_study_bivariate(rec: StudyRecord, params: ParamSet, spec: ModelSpec,
                           dn2: DependentNodes2 = None, rule: QuadRule = None) -> float:
    if rec.design is not Design.CASE_CONTROL:
        raise ValueError("bivariate likelihood needs a case-control study")
    rule = rule or gauss_legendre_01(spec.n_q)
    if dn2 is None:
        dn2 = dependent_nodes_bivariate(rule, copula_of(spec, params, "cc"))
    return float(_bivariate_block(_Counts.bivariate([rec]), params, spec, dn2, rule)[0])


def loglik_study_trivariate(rec: StudyRecord, params: ParamSet, spec: ModelSpec,
                            dn3: DependentNodes3 = None, rule: QuadRule = None) -> float:
    """Log-likelihood of one cohort study.

    ``dn3`` is honoured only for the default permutation, where its grids
    are exactly the two first-tree edges.
    """
    if rec.design is not Design.COHORT:
        raise ValueError("trivariate likelihood needs a cohort study")
    rule = rule or gauss_legendre_01(spec.n_q)
    grids = None
    if dn3 is not None:
        if spec.permutation != PERMUTATIONS[0]:
            raise ValueError("explicit DependentNodes3 only supported for permutation 12,13,23|1")
        grids = (0, (1, dn3.v2_given_1), (2, dn3.v3_given_1))
    return float(_trivariate_block(_Counts.trivariate([rec]), params, spec, rule, grids)[0])


def study_logliks(params: ParamSet, data: Dataset, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-study log-likelihoods for the case-control and cohort blocks."""
    rule = gauss_legendre_01(spec.n_q)
    cc = np.empty(0)
    co = np.empty(0)
    if data.n_case_control:
        if not spec.has_cc:
            raise ValueError("data has case-control studies but the model has no case-control copula")
        dn2 = dependent_nodes_bivariate(rule, copula_of(spec, params, "cc"))
        cc = _bivariate_block(data._cc_counts, params, spec, dn2, rule)
    if data.n_cohort:
        if not spec.has_cohort:
            raise ValueError("data has cohort studies but the model has no cohort copulas")
        co = _trivariate_block(data._cohort_counts, params, spec, rule)
    return cc, co


def hybrid_loglik(params: ParamSet, data: Dataset, spec: ModelSpec) -> float:
    """Joint log-likelihood of all case-control and cohort studies."""
    validate_params(params, spec)
    cc, co = study_logliks(params, data, spec)
    return float(np.sum(cc) + np.sum(co))
