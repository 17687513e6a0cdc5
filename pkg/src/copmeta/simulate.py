"""Synthetic hybrid meta-analyses and the bias/SD/RMSE simulation study."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .copula import CopulaFamily, CopulaSpec, cond_inverse_2given1
from .likelihood import PARAM_NAMES, Dataset, Design, ModelSpec, ParamSet, StudyRecord
from .margin import MarginKind, MarginSpec, quantile_to_prob

log = logging.getLogger(__name__)

SCALE = 50.0
MAX_RESAMPLES = 10_000

NORMAL_TRUTH = ParamSet(pi1=0.7, pi2=0.9, pi3=0.7, delta1=1.5, delta2=1.0, delta3=1.5,
                        tau_cc=-0.5, tau12=0.5, tau13=-0.5)
BETA_TRUTH = ParamSet(pi1=0.7, pi2=0.9, pi3=0.7, delta1=0.15, delta2=0.1, delta3=0.15,
                        tau_cc=-0.5, tau12=0.5, tau13=-0.5)


@dataclass(frozen=True)
class SimConfig:
    """Data-generating process for one synthetic meta-analysis.

    Defaults reproduce the Clayton / Clayton-90 normal-margin truth with
    25 case-control and 25 cohort studies.
    """

    n_case_control: int = 25
    n_cohort: int = 25
    truth: ParamSet = NORMAL_TRUTH
    true_margin: MarginSpec = field(default_factory=MarginSpec)
    true_cop_cc: CopulaFamily = CopulaFamily.CLAYTON90
    true_cop12: CopulaFamily = CopulaFamily.CLAYTON0
    true_cop13: CopulaFamily = CopulaFamily.CLAYTON90
    gamma_shape: float = 1.2
    gamma_rate: float = 0.01
    gamma_lag: float = 30.0
    cc_prevalence: float = 0.43
    seed: int = 0

    def __post_init__(self):
        if self.n_case_control < 0 or self.n_cohort < 0 or self.n_case_control + self.n_cohort < 1:
            raise ValueError("need a nonnegative number of studies of each design, at least one in total")
        if not (self.gamma_shape > 0 and self.gamma_rate > 0 and self.gamma_lag >= 0):
            raise ValueError("shifted gamma parameters must be positive")
        if not 0.0 < self.cc_prevalence < 1.0:
            raise ValueError("cc_prevalence must be in (0, 1)")
        for name in ("true_cop_cc", "true_cop12", "true_cop13"):
            object.__setattr__(self, name, CopulaFamily.parse(getattr(self, name)))

    @classmethod
    def beta_margins(cls, **kw) -> "SimConfig":
        """Beta-margin truth with the same copulas."""
        kw.setdefault("truth", BETA_TRUTH)
        kw.setdefault("true_margin", MarginSpec(MarginKind.BETA, "identity"))
        return cls(**kw)

    def true_spec(self, n_q: int = 21) -> ModelSpec:
        return ModelSpec(
            margin=self.true_margin,
            cop_cc=self.true_cop_cc if self.n_case_control else None,
            cop12=self.true_cop12 if self.n_cohort else None,
            cop13=self.true_cop13 if self.n_cohort else None,
            n_q=n_q,
        )

    def to_dict(self) -> dict:
        return {
            "n_case_control": self.n_case_control,
            "n_cohort": self.n_cohort,
            "truth": self.truth.as_dict(),
            "true_margin": self.true_margin.name,
            "true_cop_cc": self.true_cop_cc.value,
            "true_cop12": self.true_cop12.value,
            "true_cop13": self.true_cop13.value,
            "gamma_shape": self.gamma_shape,
            "gamma_rate": self.gamma_rate,
            "gamma_lag": self.gamma_lag,
            "cc_prevalence": self.cc_prevalence,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        d["truth"] = ParamSet(**d["truth"])
        d["true_margin"] = MarginSpec.parse(d["true_margin"])
        return cls(**d)


def _uniform_open(rng, size=None):
    # Generator.random draws from [0, 1); zero would break the quantile maps
    u = rng.random(size)
    while np.any(u == 0.0):
        u = np.where(u == 0.0, rng.random(size), u)
    return u


def sample_copula_pair(rng: np.random.Generator, cop: CopulaSpec, size: Optional[int] = None):
    """Draw from a bivariate copula by inverting its conditional cdf."""
    u = _uniform_open(rng, size)
    w = _uniform_open(rng, size)
    return u, cond_inverse_2given1(cop, w, u)


def sample_vine_triple(rng: np.random.Generator, cop12: CopulaSpec, cop13: CopulaSpec,
                       size: Optional[int] = None):
    """Draw from the C-vine rooted at the first variable, truncated after tree 1."""
    u1 = _uniform_open(rng, size)
    w2 = _uniform_open(rng, size)
    w3 = _uniform_open(rng, size)
    # tree-2 copula is independence, so the conditional inverse of w3 given w2 is w3
    return u1, cond_inverse_2given1(cop12, w2, u1), cond_inverse_2given1(cop13, w3, u1)


def _study_size(rng, cfg: SimConfig) -> int:
    return int(np.rint(cfg.gamma_lag + rng.gamma(cfg.gamma_shape, 1.0 / cfg.gamma_rate)))


def simulate_dataset(cfg: SimConfig, rng: Optional[np.random.Generator] = None) -> Dataset:
    """One synthetic meta-analysis: case-control studies first, then cohort studies.

    Studies that come out with an empty diseased or non-diseased arm are
    redrawn from scratch; the count of redraws is kept on the dataset.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    m = cfg.true_margin
    t = cfg.truth
    mp = [t.margin_params(j) for j in range(3)]
    studies = []
    resampled = 0

    if cfg.n_case_control:
        cop = _cop(cfg.true_cop_cc, t.tau_cc)
        while sum(s.design is Design.CASE_CONTROL for s in studies) < cfg.n_case_control:
            n = _study_size(rng, cfg)
            u1, u2 = sample_copula_pair(rng, cop)
            x1 = quantile_to_prob(m, mp[0], u1)
            x2 = quantile_to_prob(m, mp[1], u2)
            n1 = int(rng.binomial(n, cfg.cc_prevalence))
            n2 = n - n1
            if n1 == 0 or n2 == 0:
                resampled += 1
                _guard(resampled)
                continue
            studies.append(StudyRecord(Design.CASE_CONTROL, int(np.rint(n1 * x1)), n1,
                                       int(np.rint(n2 * x2)), n2, f"cc{len(studies) + 1}"))

    if cfg.n_cohort:
        c12 = _cop(cfg.true_cop12, t.tau12)
        c13 = _cop(cfg.true_cop13, t.tau13)
        done = 0
        while done < cfg.n_cohort:
            n = _study_size(rng, cfg)
            u1, u2, u3 = sample_vine_triple(rng, c12, c13)
            x1 = quantile_to_prob(m, mp[0], u1)
            x2 = quantile_to_prob(m, mp[1], u2)
            x3 = quantile_to_prob(m, mp[2], u3)
            n1 = int(np.rint(n * x3))
            n2 = n - n1
            if n1 == 0 or n2 == 0:
                resampled += 1
                _guard(resampled)
                continue
            done += 1
            studies.append(StudyRecord(Design.COHORT, int(np.rint(n1 * x1)), n1,
                                       int(np.rint(n2 * x2)), n2, f"co{done}"))
    return Dataset(tuple(studies), n_resampled=resampled)


def _cop(family, tau):
    if family is CopulaFamily.INDEPENDENCE:
        return CopulaSpec.independence()
    return CopulaSpec.from_tau(family, tau)


def _guard(count):
    if count > MAX_RESAMPLES:
        raise RuntimeError("too many degenerate studies; check the simulation truth")


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    """Independent, reproducible stream for one replication."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication,)))


# ---------------------------------------------------------------------------
# simulation study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitCandidate:
    """A model fitted in every replication; ``composite`` selects the CL fit."""

    name: str
    spec: ModelSpec
    composite: bool = False


@dataclass
class StudySummaryTable:
    """Bias, SD and RMSE of one candidate's estimates, all scaled by 50.

    Entries are ``None`` where the estimate is not comparable with the truth
    (dependence under the CL fit, or dispersion under a different margin
    family; the SD is still reported in the latter case).
    """

    name: str
    bias: dict
    sd: dict
    rmse: dict
    n_replications: int
    n_failures: int
    n_resampled: int = 0
    estimates: Optional[np.ndarray] = None
    # maximized log-likelihood per replication, NaN where the fit failed
    logliks: Optional[np.ndarray] = None

    @property
    def failure_rate(self) -> float:
        return self.n_failures / self.n_replications if self.n_replications else 0.0

    @property
    def flagged(self) -> bool:
        return self.failure_rate > 0.5

    def rows(self):
        for name in PARAM_NAMES:
            for stat in ("bias", "sd", "rmse"):
                yield name, stat, getattr(self, stat)[name]


def _replicate(args):
    cfg, candidates, rep = args
    from .inference import fit_cl, fit_ml

    data = simulate_dataset(cfg, replication_rng(cfg.seed, rep))
    out = []
    for cand in candidates:
        try:
            if cand.composite:
                fit = fit_cl(data, cand.spec.margin, n_q=cand.spec.n_q)
            else:
                fit = fit_ml(data, cand.spec)
        except Exception as exc:  # recorded as a failed replication
            log.warning("replication %d, %s: %s", rep, cand.name, exc)
            out.append(None)
            continue
        if not fit.converged:
            out.append(None)
            continue
        est = np.array([np.nan if v is None else v for v in fit.estimates.as_dict().values()])
        out.append((est, fit.loglik))
    return rep, data.n_resampled, out


def summarize(name: str, estimates: np.ndarray, truth: ParamSet, comparable: dict,
              n_replications: int, n_failures: int, n_resampled: int = 0) -> StudySummaryTable:
    """Scaled bias/SD/RMSE from an ``(n_ok, 9)`` array of estimates."""
    bias, sd, rmse = {}, {}, {}
    tv = truth.as_dict()
    for k, pname in enumerate(PARAM_NAMES):
        col = estimates[:, k] if len(estimates) else np.empty(0)
        ok = len(col) > 0 and tv[pname] is not None and np.all(np.isfinite(col))
        if not ok:
            bias[pname] = sd[pname] = rmse[pname] = None
            continue
        err = col - tv[pname]
        s = float(np.std(col))
        sd[pname] = SCALE * s
        if comparable.get(pname, True):
            b = float(np.mean(err))
            bias[pname] = SCALE * b
            rmse[pname] = SCALE * float(np.sqrt(np.mean(err ** 2)))
        else:
            bias[pname] = rmse[pname] = None
    return StudySummaryTable(name, bias, sd, rmse, n_replications, n_failures, n_resampled, estimates)


def run_simulation_study(cfg: SimConfig, candidates: Sequence[FitCandidate], n_replications: int,
                         n_jobs: int = 1) -> dict[str, StudySummaryTable]:
    """Simulate ``n_replications`` datasets and fit every candidate to each.

    Non-converged fits are excluded from the summaries and counted as
    failures. Results do not depend on ``n_jobs``.
    """
    if n_replications < 1:
        raise ValueError("n_replications must be at least 1")
    candidates = list(candidates)
    jobs = [(cfg, candidates, rep) for rep in range(n_replications)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_replicate, jobs))
    else:
        results = [_replicate(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    n_resampled = sum(r[1] for r in results)

    tables = {}
    for k, cand in enumerate(candidates):
        ests = [r[2][k][0] for r in results if r[2][k] is not None]
        lls = np.array([np.nan if r[2][k] is None else r[2][k][1] for r in results])
        arr = np.array(ests) if ests else np.empty((0, len(PARAM_NAMES)))
        same_margin = cand.spec.margin.kind is cfg.true_margin.kind
        comparable = {f"delta{j}": same_margin for j in (1, 2, 3)}
        if cand.composite:
            comparable.update(tau_cc=False, tau12=False, tau13=False)
            arr = arr.copy()
            arr[:, 6:] = np.nan
        table = summarize(cand.name, arr, cfg.truth, comparable, n_replications,
                          n_replications - len(ests), n_resampled)
        table.logliks = lls
        if table.flagged:
            log.warning("%s failed in %d of %d replications", cand.name, table.n_failures, n_replications)
        tables[cand.name] = table
    return tables
