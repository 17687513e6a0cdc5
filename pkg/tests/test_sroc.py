from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from copmeta.inference import FitResult
from copmeta.likelihood import PERMUTATIONS, ModelSpec, ParamSet
from copmeta.margin import MarginSpec, prob_density
from copmeta.sroc import (
    Block,
    Direction,
    block_copula,
    density_grid,
    hdr_thresholds,
    quantile_curve,
    summary_point,
)

PARAMS = ParamSet(0.7, 0.9, 0.4, 1.5, 1.0, 1.5, -0.5, 0.5, -0.5)
BETA_PARAMS = ParamSet(0.7, 0.9, 0.4, 0.15, 0.1, 0.15, -0.5, 0.5, -0.5)


def make_fit(spec, params=PARAMS, converged=True):
    return FitResult(estimates=params, std_errors={}, loglik=-1.0, converged=converged,
                     n_iterations=1, gradient_norm=0.0, spec=spec)


CLAYTON = make_fit(ModelSpec(cop_cc="clayton90", cop12="clayton0", cop13="clayton90"))
INDEP = make_fit(ModelSpec().independence(), PARAMS.replace(tau_cc=0.0, tau12=0.0, tau13=0.0))
BETA = make_fit(ModelSpec(margin=MarginSpec.parse("beta"), cop_cc="clayton90", cop12="clayton0",
                          cop13="clayton90"), BETA_PARAMS)


@pytest.mark.parametrize("direction,target", [("x1_of_x2", 0.7), ("x2_of_x1", 0.9)])
@pytest.mark.parametrize("block", ["cc", "cohort"])
def test_independence_median_is_constant(direction, target, block):
    c = quantile_curve(INDEP, block, 0.5, direction)
    assert_allclose(c.x_dependent, target, rtol=1e-10)


@pytest.mark.parametrize("fit", [CLAYTON, BETA, INDEP], ids=["clayton", "beta", "independence"])
@pytest.mark.parametrize("direction", ["x1_of_x2", "x2_of_x1"])
@pytest.mark.parametrize("block", ["cc", "cohort"])
def test_quantile_curves_nest(fit, direction, block):
    lo, mid, hi = (quantile_curve(fit, block, q, direction).x_dependent for q in (0.01, 0.5, 0.99))
    assert np.all(lo <= mid) and np.all(mid <= hi)
    assert np.all(lo < hi)


def test_positive_dependence_gives_increasing_curve():
    fit = make_fit(ModelSpec(cop_cc="bvn"), PARAMS.replace(tau_cc=0.5))
    c = quantile_curve(fit, "cc", 0.5, "x1_of_x2")
    assert np.all(np.diff(c.x_dependent) > 0)
    # Clayton-90 with negative tau on the case-control block: sensitivity falls as specificity rises
    c = quantile_curve(CLAYTON, "cc", 0.5, "x1_of_x2")
    assert np.all(np.diff(c.x_dependent) < 0)


def test_curve_points_orientation():
    c = quantile_curve(CLAYTON, "cc", 0.5, "x2_of_x1", grid_size=11)
    assert c.direction is Direction.X2_OF_X1 and c.block is Block.CASE_CONTROL
    assert_allclose(c.points[:, 1], c.x_independent)
    assert_allclose(c.points[:, 0], c.x_dependent)
    assert c.points.shape == (11, 2)


@pytest.mark.parametrize("fit", [CLAYTON, BETA, INDEP], ids=["clayton", "beta", "independence"])
@pytest.mark.parametrize("block", ["cc", "cohort"])
def test_density_mass(fit, block):
    g = density_grid(fit, block, resolution=200)
    assert 0.99 <= g.mass <= 1.01
    assert np.all(g.density >= 0)


def test_independence_density_is_product_of_margins():
    g = density_grid(INDEP, "cc", resolution=80)
    m = INDEP.spec.margin
    f1 = prob_density(m, INDEP.estimates.margin_params(0), g.sens)
    f2 = prob_density(m, INDEP.estimates.margin_params(1), g.spec)
    assert_allclose(g.density, np.outer(f1, f2), rtol=1e-10, atol=1e-300)


def test_hdr_thresholds_on_known_grid():
    dens = np.array([4.0, 3.0, 2.0, 1.0])
    t = hdr_thresholds(dens, 0.1, (0.4, 0.7, 0.95))
    # cumulative masses 0.4, 0.7, 0.9, 1.0
    assert t == {0.4: 4.0, 0.7: 3.0, 0.95: 1.0}
    with pytest.raises(ValueError):
        hdr_thresholds(dens, 0.1, (1.0,))


def test_hdr_levels_nest():
    g = density_grid(CLAYTON, "cc", resolution=100, coverage_levels=(0.5, 0.9, 0.99))
    t = g.hdr_thresholds
    assert t[0.5] > t[0.9] > t[0.99] > 0
    inside = g.density[g.density >= t[0.9]].sum() * g.cell_area
    assert 0.9 <= inside < 0.92


def test_summary_point():
    p = summary_point(CLAYTON)
    assert (p.sens, p.spec, p.prevalence) == (0.7, 0.9, 0.4)
    cc_only = make_fit(ModelSpec(cop12=None, cop13=None), PARAMS.replace(pi3=None, delta3=None, tau12=None,
                                                                          tau13=None))
    assert summary_point(cc_only).prevalence is None


def test_rejections():
    with pytest.raises(ValueError, match="converged"):
        quantile_curve(replace(CLAYTON, converged=False))
    with pytest.raises(ValueError, match="converged"):
        density_grid(replace(CLAYTON, converged=False))
    perm3 = make_fit(replace(CLAYTON.spec, permutation=PERMUTATIONS[2]))
    with pytest.raises(ValueError, match="first-tree"):
        block_copula(perm3, "cohort")
    block_copula(perm3, "cc")
    with pytest.raises(ValueError):
        quantile_curve(CLAYTON, q=1.0)
    with pytest.raises(ValueError):
        density_grid(CLAYTON, resolution=10)
    with pytest.raises(ValueError):
        quantile_curve(CLAYTON, block="both")
