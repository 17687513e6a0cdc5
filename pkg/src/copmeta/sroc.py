"""Summary ROC output: quantile-regression curves, summary points and density grids.

Curves are conditional quantiles of one latent proportion given the other
under the fitted copula and margins. The joint density grid supports
predictive-region contours through highest-density-region thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .copula import CopulaSpec, cond_inverse_1given2, cond_inverse_2given1, density
from .inference import FitResult
from .likelihood import PERMUTATIONS, copula_of
from .margin import prob_density, prob_to_quantile, quantile_to_prob

# keep margin-cdf images off the boundary where conditional inverses are undefined
_U_CLIP = 1e-12


class Direction(str, Enum):
    X1_OF_X2 = "x1_of_x2"
    X2_OF_X1 = "x2_of_x1"


class Block(str, Enum):
    CASE_CONTROL = "cc"
    COHORT = "cohort"


@dataclass(frozen=True)
class SrocCurve:
    """Conditional ``q``-quantile of one proportion as a function of the other.

    ``x_independent`` is the conditioning proportion (specificity for
    ``x1_of_x2``, sensitivity for ``x2_of_x1``) in increasing order.
    """

    q: float
    direction: Direction
    block: Block
    x_independent: np.ndarray
    x_dependent: np.ndarray

    @property
    def points(self) -> np.ndarray:
        """(specificity, sensitivity) pairs ordered by the independent coordinate."""
        if self.direction is Direction.X1_OF_X2:
            return np.column_stack([self.x_independent, self.x_dependent])
        return np.column_stack([self.x_dependent, self.x_independent])


@dataclass(frozen=True)
class DensityGrid:
    """Joint density of (sensitivity, specificity) on a midpoint grid.

    ``density[i, j]`` is evaluated at ``(sens[i], spec[j])``.
    """

    block: Block
    sens: np.ndarray
    spec: np.ndarray
    density: np.ndarray
    hdr_thresholds: dict

    @property
    def cell_area(self) -> float:
        return (1.0 / len(self.sens)) * (1.0 / len(self.spec))

    @property
    def mass(self) -> float:
        return float(self.density.sum() * self.cell_area)


@dataclass(frozen=True)
class SummaryPoint:
    sens: float
    spec: float
    prevalence: Optional[float] = None


def _require_converged(fit: FitResult) -> None:
    if not fit.converged:
        raise ValueError("SROC output needs a converged fit")


def block_copula(fit: FitResult, block) -> CopulaSpec:
    """Copula joining (sensitivity, specificity) in the requested block."""
    block = Block(block)
    spec = fit.spec
    if block is Block.CASE_CONTROL:
        if not spec.has_cc:
            raise ValueError("fit has no case-control block")
        return copula_of(spec, fit.estimates, "cc")
    if not spec.has_cohort:
        raise ValueError("fit has no cohort block")
    if spec.permutation == PERMUTATIONS[2]:
        raise ValueError(
            f"under permutation {PERMUTATIONS[2]} no first-tree edge joins sensitivity and specificity"
        )
    return copula_of(spec, fit.estimates, "12")


def _midpoints(k: int) -> np.ndarray:
    return (np.arange(k) + 0.5) / k


def quantile_curve(fit: FitResult, block="cc", q: float = 0.5, direction="x1_of_x2",
                   grid_size: int = 101) -> SrocCurve:
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be in (0, 1), got {q}")
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    _require_converged(fit)
    direction = Direction(direction)
    block = Block(block)
    cop = block_copula(fit, block)
    m = fit.spec.margin
    p1 = fit.estimates.margin_params(0)
    p2 = fit.estimates.margin_params(1)
    x = _midpoints(grid_size)
    qq = np.full_like(x, q)
    if direction is Direction.X1_OF_X2:
        u2 = np.clip(prob_to_quantile(m, p2, x), _U_CLIP, 1.0 - _U_CLIP)
        u1 = cond_inverse_1given2(cop, qq, u2)
        y = quantile_to_prob(m, p1, np.clip(u1, _U_CLIP, 1.0 - _U_CLIP))
    else:
        u1 = np.clip(prob_to_quantile(m, p1, x), _U_CLIP, 1.0 - _U_CLIP)
        u2 = cond_inverse_2given1(cop, qq, u1)
        y = quantile_to_prob(m, p2, np.clip(u2, _U_CLIP, 1.0 - _U_CLIP))
    return SrocCurve(float(q), direction, block, x, np.asarray(y, dtype=float))


def hdr_thresholds(density: np.ndarray, cell_area: float, levels: Sequence[float]) -> dict:
    """Density level whose superlevel set holds each requested probability mass."""
    flat = np.sort(np.ravel(density))[::-1]
    mass = np.cumsum(flat) * cell_area
    total = mass[-1]
    out = {}
    for level in levels:
        if not 0.0 < level < 1.0:
            raise ValueError(f"coverage level must be in (0, 1), got {level}")
        k = int(np.searchsorted(mass, level * total))
        out[float(level)] = float(flat[min(k, len(flat) - 1)])
    return out


def density_grid(fit: FitResult, block="cc", resolution: int = 200,
                 coverage_levels: Sequence[float] = (0.5, 0.9, 0.99)) -> DensityGrid:
    if resolution < 50:
        raise ValueError("resolution must be at least 50")
    _require_converged(fit)
    block = Block(block)
    cop = block_copula(fit, block)
    m = fit.spec.margin
    p1 = fit.estimates.margin_params(0)
    p2 = fit.estimates.margin_params(1)
    x = _midpoints(resolution)
    f1 = np.asarray(prob_density(m, p1, x))
    f2 = np.asarray(prob_density(m, p2, x))
    dens = np.outer(f1, f2)
    if not cop.is_independence:
        u1 = np.clip(prob_to_quantile(m, p1, x), _U_CLIP, 1.0 - _U_CLIP)
        u2 = np.clip(prob_to_quantile(m, p2, x), _U_CLIP, 1.0 - _U_CLIP)
        dens = dens * density(cop, u1[:, None], u2[None, :])
    dens = np.where(np.isfinite(dens), dens, 0.0)
    area = 1.0 / resolution**2
    return DensityGrid(block, x, x.copy(), dens, hdr_thresholds(dens, area, coverage_levels))


def summary_point(fit: FitResult) -> SummaryPoint:
    _require_converged(fit)
    e = fit.estimates
    prev = e.pi3 if fit.spec.has_cohort else None
    return SummaryPoint(float(e.pi1), float(e.pi2), None if prev is None else float(prev))

