"""Maximum-likelihood and composite-likelihood fitting of hybrid models.

Optimization runs BFGS on an unconstrained reparameterization of the
free parameters, with central-difference gradients. Standard errors come
from a central-difference Hessian at the optimum, mapped back to the
natural scale by the delta method; dependence SEs are on the tau scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit
from scipy.stats import chi2, norm, spearmanr

from .copula import CopulaFamily, tau_bounds
from .likelihood import (
    PARAM_NAMES,
    Dataset,
    ModelSpec,
    ParamSet,
    hybrid_loglik,
)
from .margin import LinkFn, MarginKind, MarginSpec, link_apply, link_inverse

log = logging.getLogger(__name__)

GRAD_STEP = 1e-5
HESS_STEP = 1e-4
GTOL = 1e-5
MAX_ITER = 500
# practical limits of the optimizer's tau range, inside each family's attainable interval
TAU_EDGE = 0.99


class ConfigurationError(ValueError):
    """The model cannot be estimated from the supplied data."""


@dataclass(frozen=True)
class FitResult:
    estimates: ParamSet
    std_errors: dict
    loglik: float
    converged: bool
    n_iterations: int
    gradient_norm: float
    spec: ModelSpec
    method: str = "ml"
    fixed_at_zero: tuple = ()
    data_hash: str = ""
    message: str = ""

    @property
    def free_parameters(self) -> tuple[str, ...]:
        return tuple(k for k, v in self.std_errors.items() if v is not None)


@dataclass(frozen=True)
class LrtResult:
    stat: float
    df: int
    p_value: float


# ---------------------------------------------------------------------------
# parameter transforms
# ---------------------------------------------------------------------------


def optimizer_tau_bounds(family: CopulaFamily) -> tuple[float, float]:
    lo, hi = tau_bounds(family)
    return max(lo, -TAU_EDGE), min(hi, TAU_EDGE)


@dataclass(frozen=True)
class _Transform:
    """Map between the free natural parameters and an unconstrained vector."""

    spec: ModelSpec
    names: tuple

    @classmethod
    def for_spec(cls, spec: ModelSpec) -> "_Transform":
        names = ["pi1", "pi2"]
        if spec.has_cohort:
            names.append("pi3")
        names += ["delta1", "delta2"]
        if spec.has_cohort:
            names.append("delta3")
        for name, fam in (("tau_cc", spec.cop_cc), ("tau12", spec.cop12), ("tau13", spec.cop13)):
            if fam is not None and fam is not CopulaFamily.INDEPENDENCE:
                names.append(name)
        return cls(spec, tuple(names))

    def _family(self, name):
        return {"tau_cc": self.spec.cop_cc, "tau12": self.spec.cop12, "tau13": self.spec.cop13}[name]

    def _pi_link(self):
        m = self.spec.margin
        return LinkFn.LOGIT if m.kind is MarginKind.BETA else m.link

    def to_free(self, params: ParamSet) -> np.ndarray:
        z = np.empty(len(self.names))
        beta = self.spec.margin.kind is MarginKind.BETA
        for k, name in enumerate(self.names):
            v = getattr(params, name)
            if name.startswith("pi"):
                z[k] = link_apply(self._pi_link(), v)
            elif name.startswith("delta"):
                z[k] = logit(v) if beta else math.log(v)
            else:
                lo, hi = optimizer_tau_bounds(self._family(name))
                s = (v - lo) / (hi - lo)
                z[k] = 0.5 * logit(s)
        return z

    def to_natural(self, z) -> ParamSet:
        vals = self.natural_values(z)
        base = {n: None for n in PARAM_NAMES}
        for name, fam in (("tau_cc", self.spec.cop_cc), ("tau12", self.spec.cop12), ("tau13", self.spec.cop13)):
            if fam is CopulaFamily.INDEPENDENCE:
                base[name] = 0.0
        base.update(vals)
        return ParamSet(**base)

    def natural_values(self, z) -> dict:
        out = {}
        beta = self.spec.margin.kind is MarginKind.BETA
        for k, name in enumerate(self.names):
            x = float(z[k])
            if name.startswith("pi"):
                out[name] = float(link_inverse(self._pi_link(), x))
            elif name.startswith("delta"):
                out[name] = float(expit(x)) if beta else math.exp(x)
            else:
                lo, hi = optimizer_tau_bounds(self._family(name))
                out[name] = lo + (hi - lo) * float(expit(2.0 * min(max(x, -20.0), 20.0)))
        return out

    def jacobian_diag(self, z) -> np.ndarray:
        """d natural / d free for each coordinate (the map is diagonal)."""
        d = np.empty(len(self.names))
        beta = self.spec.margin.kind is MarginKind.BETA
        for k, name in enumerate(self.names):
            x = float(z[k])
            if name.startswith("pi"):
                link = self._pi_link()
                if link is LinkFn.LOGIT:
                    p = expit(x)
                    d[k] = p * (1.0 - p)
                elif link is LinkFn.PROBIT:
                    d[k] = norm.pdf(x)
                else:
                    d[k] = math.exp(x - math.exp(x))
            elif name.startswith("delta"):
                if beta:
                    g = expit(x)
                    d[k] = g * (1.0 - g)
                else:
                    d[k] = math.exp(x)
            else:
                lo, hi = optimizer_tau_bounds(self._family(name))
                s = expit(2.0 * x)
                d[k] = 2.0 * (hi - lo) * s * (1.0 - s)
        return d


# ---------------------------------------------------------------------------
# numerical derivatives
# ---------------------------------------------------------------------------


def central_gradient(f, x, h=GRAD_STEP):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def central_hessian(f, x, h=HESS_STEP, f0=None):
    x = np.asarray(x, dtype=float)
    n = len(x)
    f0 = f(x) if f0 is None else f0
    H = np.empty((n, n))
    eye = np.eye(n) * h
    for i in range(n):
        H[i, i] = (f(x + eye[i]) - 2.0 * f0 + f(x - eye[i])) / h**2
        for j in range(i):
            v = (f(x + eye[i] + eye[j]) - f(x + eye[i] - eye[j])
                 - f(x - eye[i] + eye[j]) + f(x - eye[i] - eye[j])) / (4.0 * h * h)
            H[i, j] = H[j, i] = v
    return H


# ---------------------------------------------------------------------------
# starting values
# ---------------------------------------------------------------------------


def _empirical(y, n):
    return (np.asarray(y, float) + 0.5) / (np.asarray(n, float) + 1.0)


def default_init(data: Dataset, spec: ModelSpec) -> ParamSet:
    """Moment start for the margins and small taus signed by rank correlation."""
    m = spec.margin
    cc, co = data.case_control, data.cohort
    props = [
        _empirical([s.y1 for s in data.studies], [s.n1 for s in data.studies]),
        _empirical([s.y2 for s in data.studies], [s.n2 for s in data.studies]),
        _empirical([s.y3 for s in co], [s.n3 for s in co]) if co else None,
    ]
    vals = {}
    for j, p in enumerate(props):
        if p is None:
            continue
        if m.kind is MarginKind.BETA:
            mean = float(np.mean(p))
            var = float(np.var(p, ddof=1)) if len(p) > 1 else 0.0
            gamma = var / (mean * (1.0 - mean)) if var > 0 else 0.1
            vals[f"pi{j + 1}"] = mean
            vals[f"delta{j + 1}"] = float(np.clip(gamma, 0.02, 0.8))
        else:
            eta = np.asarray(link_apply(m.link, p))
            vals[f"pi{j + 1}"] = float(link_inverse(m.link, float(np.mean(eta))))
            sd = float(np.std(eta, ddof=1)) if len(eta) > 1 else 0.5
            vals[f"delta{j + 1}"] = float(np.clip(sd, 0.1, 5.0))

    def rank_sign(a, b):
        if len(a) < 3:
            return 0.0
        r = spearmanr(a, b)[0]
        return 0.0 if not np.isfinite(r) else float(np.sign(r))

    def start_tau(fam, sign):
        if fam is None:
            return None
        if fam is CopulaFamily.INDEPENDENCE:
            return 0.0
        lo, hi = tau_bounds(fam)
        if lo >= 0.0:
            return 0.1
        if hi <= 0.0:
            return -0.1
        return 0.1 * sign

    def arms(studies):
        return (_empirical([s.y1 for s in studies], [s.n1 for s in studies]),
                _empirical([s.y2 for s in studies], [s.n2 for s in studies]))

    if spec.has_cc:
        a, b = arms(cc)
        vals["tau_cc"] = start_tau(spec.cop_cc, rank_sign(a, b))
    if spec.has_cohort:
        a, b = arms(co)
        c = props[2]
        vals["tau12"] = start_tau(spec.cop12, rank_sign(a, b))
        vals["tau13"] = start_tau(spec.cop13, rank_sign(a, c))
    return ParamSet(**vals)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def _check_estimable(data: Dataset, spec: ModelSpec) -> None:
    if data.n_cohort == 0 and spec.has_cohort:
        raise ConfigurationError(
            "no cohort studies: prevalence and vine parameters are inestimable; "
            "fit the bivariate model by setting cop12 and cop13 to None")
    if data.n_case_control == 0 and spec.has_cc:
        raise ConfigurationError(
            "no case-control studies: tau_cc is inestimable; "
            "fit the trivariate model by setting cop_cc to None")
    if data.n_cohort and not spec.has_cohort:
        raise ConfigurationError("data contain cohort studies but the model has no cohort copulas")
    if data.n_case_control and not spec.has_cc:
        raise ConfigurationError("data contain case-control studies but the model has no case-control copula")


class _Objective:
    def __init__(self, data: Dataset, spec: ModelSpec):
        self.data = data
        self.spec = spec
        self.tr = _Transform.for_spec(spec)
        self.n_evals = 0

    def __call__(self, z) -> float:
        self.n_evals += 1
        try:
            val = -hybrid_loglik(self.tr.to_natural(z), self.data, self.spec)
        except (ValueError, FloatingPointError, OverflowError):
            return 1e100
        return val if np.isfinite(val) else 1e100

    def grad(self, z):
        return central_gradient(self, z)


def _newton_polish(obj: _Objective, z, fz, max_steps=20):
    """Damped Newton steps on the numerical Hessian after BFGS stalls."""
    steps = 0
    g = obj.grad(z)
    for _ in range(max_steps):
        if np.max(np.abs(g)) <= GTOL:
            break
        H = central_hessian(obj, z, f0=fz)
        w, V = np.linalg.eigh(H)
        w = np.maximum(np.abs(w), 1e-6)
        step = -V @ ((V.T @ g) / w)
        t = 1.0
        improved = False
        while t > 1e-6:
            zn = z + t * step
            fn = obj(zn)
            if fn <= fz:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        z, fz = zn, fn
        g = obj.grad(z)
        steps += 1
    return z, fz, g, steps


def _fit(data: Dataset, spec: ModelSpec, init: Optional[ParamSet], method: str,
         fixed: tuple, compute_se: bool = True) -> FitResult:
    _check_estimable(data, spec)
    obj = _Objective(data, spec)
    tr = obj.tr
    start = init if init is not None else default_init(data, spec)
    z0 = tr.to_free(start)
    f0 = obj(z0)
    if f0 >= 1e100:
        raise ValueError("log-likelihood is not finite at the starting values")

    res = minimize(obj, z0, jac=obj.grad, method="BFGS",
                   options={"gtol": GTOL, "norm": np.inf, "maxiter": MAX_ITER})
    z, fz = np.asarray(res.x, dtype=float), float(res.fun)
    if fz > f0:
        z, fz = z0, f0
    z, fz, g, polish = _newton_polish(obj, z, fz)
    gnorm = float(np.max(np.abs(g)))
    converged = gnorm <= GTOL
    message = str(res.message)

    ses = {name: None for name in PARAM_NAMES}
    if compute_se:
        H = central_hessian(obj, z, f0=fz)
        try:
            w = np.linalg.eigvalsh(H)
            if np.min(w) <= 0:
                raise np.linalg.LinAlgError("Hessian not positive definite")
            cov = np.linalg.inv(H)
            J = tr.jacobian_diag(z)
            se = np.abs(J) * np.sqrt(np.diag(cov))
            if not np.all(np.isfinite(se) & (se > 0)):
                raise np.linalg.LinAlgError("non-positive standard error")
            ses.update(zip(tr.names, map(float, se)))
        except np.linalg.LinAlgError as exc:
            converged = False
            message = f"{message}; {exc}"
            ses.update({name: float("nan") for name in tr.names})
    if not converged:
        log.info("fit of %s did not converge: %s (|grad|=%.3g)", spec.name, message, gnorm)
    return FitResult(
        estimates=tr.to_natural(z),
        std_errors=ses,
        loglik=-fz,
        converged=bool(converged),
        n_iterations=int(res.nit) + polish,
        gradient_norm=gnorm,
        spec=spec,
        method=method,
        fixed_at_zero=fixed,
        data_hash=data.fingerprint,
        message=message,
    )


def fit_ml(data: Dataset, spec: ModelSpec, init: Optional[ParamSet] = None,
           compute_se: bool = True) -> FitResult:
    """Maximum-likelihood fit of the hybrid copula mixed model."""
    return _fit(data, spec, init, "ml", (), compute_se)


def fit_cl(data: Dataset, margin: MarginSpec = None, n_q: int = 21,
           compute_se: bool = True) -> FitResult:
    """Composite-likelihood fit: random effects independent, margins estimated.

    Dependence parameters are reported as zero and listed in
    ``fixed_at_zero``.
    """
    margin = margin or MarginSpec()
    ind = CopulaFamily.INDEPENDENCE
    spec = ModelSpec(
        margin=margin,
        cop_cc=ind if data.n_case_control else None,
        cop12=ind if data.n_cohort else None,
        cop13=ind if data.n_cohort else None,
        n_q=n_q,
    )
    fixed = tuple(n for n, present in (("tau_cc", spec.has_cc), ("tau12", spec.has_cohort),
                                       ("tau13", spec.has_cohort)) if present)
    return _fit(data, spec, None, "cl", fixed, compute_se)


def lrt_vs_independence(full: FitResult, reduced: FitResult, df: int = 3) -> LrtResult:
    """Likelihood-ratio test of a copula fit against the independence fit."""
    if int(df) != df or df < 1:
        raise ValueError("df must be a positive integer")
    if full.data_hash and reduced.data_hash and full.data_hash != reduced.data_hash:
        raise ValueError("fits were computed on different datasets")
    if full.spec.margin != reduced.spec.margin:
        raise ValueError("fits use different margins")
    stat = 2.0 * (full.loglik - reduced.loglik)
    if stat < -1e-6:
        raise ValueError(f"full model log-likelihood is below the reduced model's (stat={stat:.3g})")
    stat = max(stat, 0.0)
    return LrtResult(stat, int(df), float(chi2.sf(stat, df)))


# ---------------------------------------------------------------------------
# model comparison
# ---------------------------------------------------------------------------


@dataclass
class ScanRow:
    name: str
    spec: ModelSpec
    fit: Optional[FitResult] = None
    error: Optional[str] = None


def model_scan(data: Dataset, margins: Sequence[MarginSpec],
               copula_triples: Sequence[tuple], n_q: int = 21, permutation: str = "12,13,23|1",
               labels: Sequence[str] = None) -> list[ScanRow]:
    """Fit every margin x copula-triple combination and rank by log-likelihood.

    Each triple is ``(cop_cc, cop12, cop13)``. A triple of three
    independence copulas is fitted as the composite-likelihood model. Fits
    that raise are kept as rows with ``error`` set and sorted last.
    """
    if not margins or not copula_triples:
        raise ValueError("need at least one margin and one copula triple")
    rows = []
    for m in margins:
        for k, triple in enumerate(copula_triples):
            fams = [None if f is None else CopulaFamily.parse(f) for f in triple]
            fams[0] = fams[0] if data.n_case_control else None
            if not data.n_cohort:
                fams[1] = fams[2] = None
            spec = ModelSpec(margin=m, cop_cc=fams[0], cop12=fams[1], cop13=fams[2],
                             permutation=permutation, n_q=n_q)
            name = spec.name if labels is None else f"{m.name}/{labels[k]}"
            row = ScanRow(name, spec)
            try:
                present = [f for f in fams if f is not None]
                if all(f is CopulaFamily.INDEPENDENCE for f in present):
                    row.fit = fit_cl(data, m, n_q=n_q)
                else:
                    row.fit = fit_ml(data, spec)
            except Exception as exc:
                row.error = f"{type(exc).__name__}: {exc}"
            rows.append(row)

    def key(r: ScanRow):
        if r.fit is None:
            return (1, 0.0, 0, r.name)
        return (0, -r.fit.loglik, r.fit.n_iterations, r.name)

    return sorted(rows, key=key)
