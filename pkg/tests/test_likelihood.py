import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad
from scipy.special import expit, logit
from scipy.stats import binom, norm

from _oracles import brute_bivariate, brute_trivariate
from copmeta.likelihood import (
    PERMUTATIONS,
    Dataset,
    Design,
    ModelSpec,
    ParamSet,
    StudyRecord,
    binom_logpmf,
    hybrid_loglik,
    loglik_study_bivariate,
    loglik_study_trivariate,
    study_logliks,
    validate_params,
)
from copmeta.margin import MarginSpec

TRUTH = ParamSet(0.7, 0.9, 0.7, 1.5, 1.0, 1.5, -0.5, 0.5, -0.5)
CLAYTON_SPEC = ModelSpec(cop_cc="clayton90", cop12="clayton0", cop13="clayton90")
CC = StudyRecord(Design.CASE_CONTROL, 5, 10, 8, 10)
CO = StudyRecord(Design.COHORT, 5, 10, 8, 10)


def test_binom_exact_rational():
    exact = math.comb(10, 5) * Fraction(3, 10) ** 5 * Fraction(7, 10) ** 5
    assert_allclose(binom_logpmf(5, 10, 0.3), math.log(exact), rtol=1e-14)
    assert_allclose(float(exact), 0.1029193452, rtol=1e-9)


@pytest.mark.parametrize("n,p", [(0, 0.3), (1, 0.5), (20, 0.05), (150, 0.9)])
def test_binom_sums_to_one(n, p):
    y = np.arange(n + 1)
    assert_allclose(np.exp(binom_logpmf(y, n, p)).sum(), 1.0, rtol=1e-12)
    assert_allclose(binom_logpmf(y, n, p), binom.logpmf(y, n, p), rtol=1e-10)


@pytest.mark.parametrize("args", [
    ("cc", 11, 10, 8, 10), ("cc", -1, 10, 8, 10), ("cohort", 5, 10, 8, 0), ("cc", 5, 0, 8, 10),
])
def test_record_invariants(args):
    with pytest.raises(ValueError):
        StudyRecord(*args)


def test_cohort_prevalence_counts():
    assert (CO.y3, CO.n3) == (10, 20)


def test_dataset_views_and_fingerprint():
    d = Dataset((CC, CO, CC))
    assert (d.n_case_control, d.n_cohort, len(d)) == (2, 1, 3)
    assert d.fingerprint == Dataset((CC, CO, CC)).fingerprint
    assert d.fingerprint != Dataset((CO, CC, CC)).fingerprint


@pytest.mark.parametrize("alias,perm", [("1", PERMUTATIONS[0]), ("2", PERMUTATIONS[1]),
                                        ("13, 23, 12|3", PERMUTATIONS[2])])
def test_permutation_aliases(alias, perm):
    assert ModelSpec(permutation=alias).permutation == perm


def test_spec_validation_and_roundtrip():
    with pytest.raises(ValueError):
        ModelSpec(permutation="12,13|1")
    with pytest.raises(ValueError):
        ModelSpec(cop12=None)
    with pytest.raises(ValueError):
        ModelSpec(cop_cc=None, cop12=None, cop13=None)
    spec = ModelSpec(margin=MarginSpec.parse("beta"), cop_cc=None, cop12="frank", cop13="clayton270",
                     permutation="2", n_q=15)
    assert ModelSpec.from_dict(spec.to_dict()) == spec
    assert spec.name == "beta/-,frank,clayton270"


def test_validate_params():
    with pytest.raises(ValueError, match="component 2"):
        validate_params(TRUTH.replace(delta2=-1.0), ModelSpec())
    with pytest.raises(ValueError, match="tau12"):
        validate_params(TRUTH.replace(tau12=None), ModelSpec())
    validate_params(TRUTH.replace(tau12=None, tau13=None, tau_cc=None), ModelSpec().independence())


def _univariate(y, n, pi, sigma):
    mu = logit(pi)
    f = lambda z: binom.pmf(y, n, expit(mu + sigma * z)) * norm.pdf(z)
    val, _ = quad(f, -12, 12, epsabs=0, epsrel=1e-12, limit=200)
    return math.log(val)


def test_independence_factorizes_into_univariate_integrals():
    spec = ModelSpec().independence()
    spec = replace(spec, n_q=120)
    p = TRUTH.replace(tau_cc=0.0, tau12=0.0, tau13=0.0)
    expected = _univariate(5, 10, 0.7, 1.5) + _univariate(8, 10, 0.9, 1.0)
    assert_allclose(loglik_study_bivariate(CC, p, spec), expected, rtol=1e-7)
    expected3 = expected + _univariate(10, 20, 0.7, 1.5)
    assert_allclose(loglik_study_trivariate(CO, p, spec), expected3, rtol=1e-7)


def test_independence_same_under_every_permutation():
    p = TRUTH.replace(tau_cc=0.0, tau12=0.0, tau13=0.0)
    vals = [loglik_study_trivariate(CO, p, ModelSpec(permutation=k).independence()) for k in PERMUTATIONS]
    assert_allclose(vals, vals[0], rtol=1e-13)


def test_bivariate_converges_to_brute_force():
    ref = brute_bivariate(CC, TRUTH, CLAYTON_SPEC)
    val = loglik_study_bivariate(CC, TRUTH, replace(CLAYTON_SPEC, n_q=200))
    assert_allclose(val, ref, rtol=1e-6)
    errs = [abs(loglik_study_bivariate(CC, TRUTH, replace(CLAYTON_SPEC, n_q=n)) - ref) for n in (11, 21, 61)]
    assert errs[0] > errs[1] > errs[2]


@pytest.mark.parametrize("perm", PERMUTATIONS)
def test_trivariate_converges_to_brute_force(perm):
    spec = replace(CLAYTON_SPEC, permutation=perm)
    ref = brute_trivariate(CO, TRUTH, spec)
    assert_allclose(loglik_study_trivariate(CO, TRUTH, replace(spec, n_q=150)), ref, rtol=1e-6)


def test_beta_margins_against_brute_force():
    p = ParamSet(0.7, 0.9, 0.7, 0.15, 0.1, 0.15, -0.5, 0.5, -0.5)
    spec = replace(CLAYTON_SPEC, margin=MarginSpec.parse("beta"), n_q=200)
    assert_allclose(loglik_study_bivariate(CC, p, spec), brute_bivariate(CC, p, spec), rtol=1e-5)
    assert_allclose(loglik_study_trivariate(CO, p, replace(spec, n_q=150)),
                    brute_trivariate(CO, p, spec), rtol=1e-5)


def test_hybrid_is_sum_of_studies():
    data = Dataset((CC, CO, StudyRecord("cc", 40, 60, 80, 90), StudyRecord("cohort", 2, 30, 60, 61)))
    total = hybrid_loglik(TRUTH, data, CLAYTON_SPEC)
    parts = [loglik_study_bivariate(s, TRUTH, CLAYTON_SPEC) if s.design is Design.CASE_CONTROL
             else loglik_study_trivariate(s, TRUTH, CLAYTON_SPEC) for s in data.studies]
    assert_allclose(total, sum(parts), rtol=1e-13)
    cc, co = study_logliks(TRUTH, data, CLAYTON_SPEC)
    assert cc.shape == (2,) and co.shape == (2,)


def test_study_logliks_needs_matching_blocks():
    with pytest.raises(ValueError, match="case-control"):
        study_logliks(TRUTH, Dataset((CC,)), ModelSpec(cop_cc=None))


def test_extreme_counts_stay_finite():
    data = Dataset((StudyRecord("cc", 0, 500, 500, 500), StudyRecord("cohort", 300, 300, 0, 1)))
    assert np.isfinite(hybrid_loglik(TRUTH, data, CLAYTON_SPEC))


def test_smooth_in_each_parameter():
    data = Dataset((CC, CO, StudyRecord("cc", 40, 60, 80, 90)))
    base = TRUTH.as_dict()
    for name in base:
        xs = base[name] + np.linspace(-1e-3, 1e-3, 21)
        vals = np.array([hybrid_loglik(TRUTH.replace(**{name: x}), data, CLAYTON_SPEC) for x in xs])
        slopes = np.diff(vals) / np.diff(xs)
        # the slope changes by a bounded amount between neighbouring points
        assert np.max(np.abs(np.diff(slopes))) < 1e-2 * max(1.0, np.max(np.abs(slopes))), name
