"""
Second stage: contrasts of every evaluator effect against the mean (or the
truncated mean) of all evaluator effects, and their Wald chi-square tests.
"""

import logging
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from .calibration import chisq1_sf
from .exceptions import DegenerateContrastError
from .utils import as_vector, trim_count

logger = logging.getLogger(__name__)

UNTRUNCATED = 'untruncated'
TRUNCATED = 'truncated'

DEFAULT_DELTA = 0.1


@dataclass(frozen=True, eq=False)
class ContrastSpec:
    j: int
    kind: str
    delta: float
    L: np.ndarray
    truncated_set: frozenset = frozenset()


@dataclass(frozen=True)
class TestResult:
    j: int
    estimate: float
    se: float
    statistic: float
    p_value: float


def _kept_count(M, delta):
    kept = M - 2 * trim_count(M, delta)
    if kept < 1:
        raise ValidationError(f"Trimming {delta:g} from each tail of {M} evaluators leaves none.")
    return kept


def trimmed_indices(beta_hat, delta):
    """
    Indices of the [M delta] smallest and [M delta] largest estimates.
    Ties are ordered by (value, index).
    """
    beta_hat = as_vector(beta_hat, 'beta_hat')
    M = beta_hat.shape[0]
    g = trim_count(M, delta)
    _kept_count(M, delta)
    if g == 0:
        return frozenset()
    order = np.lexsort((np.arange(M), beta_hat))
    return frozenset(int(index) for index in np.concatenate([order[:g], order[M - g:]]))


def truncated_mean(beta_hat, delta=DEFAULT_DELTA):
    """Mean of the order statistics [M delta] + 1 ... M - [M delta]."""
    beta_hat = as_vector(beta_hat, 'beta_hat')
    M = beta_hat.shape[0]
    g = trim_count(M, delta)
    _kept_count(M, delta)
    return float(np.mean(np.sort(beta_hat)[g:M - g]))


def make_contrast(j, M, kind=TRUNCATED, delta=DEFAULT_DELTA, beta_hat=None):
    """
    Contrast vector L_j such that L_j' beta is evaluator j's effect minus
    the (truncated) mean effect. The truncated set is taken from the
    estimated order statistics and treated as fixed.
    """
    if not 0 <= j < M:
        raise ValidationError(f"Evaluator index {j} outside 0..{M - 1}.")

    if kind == UNTRUNCATED:
        L = np.full(M, -1.0 / M)
        L[j] += 1.0
        return ContrastSpec(j=j, kind=kind, delta=0.0, L=L)

    if kind != TRUNCATED:
        raise ValidationError(f"Unknown contrast kind '{kind}'.")
    if beta_hat is None:
        raise ValidationError("The truncated contrast needs the estimated evaluator effects.")
    beta_hat = as_vector(beta_hat, 'beta_hat')
    if beta_hat.shape[0] != M:
        raise ValidationError(f"Expected {M} evaluator effects, got {beta_hat.shape[0]}.")

    kept = _kept_count(M, delta)
    trimmed = trimmed_indices(beta_hat, delta)
    L = np.full(M, -1.0 / kept)
    if trimmed:
        L[sorted(trimmed)] = 0.0
    L[j] += 1.0
    return ContrastSpec(j=j, kind=kind, delta=float(delta), L=L, truncated_set=trimmed)


def make_contrasts(M, kind=TRUNCATED, delta=DEFAULT_DELTA, beta_hat=None):
    return [make_contrast(j, M, kind, delta, beta_hat) for j in range(M)]


def contrast_variance(fit, contrast):
    return float(contrast.L @ fit.beta_cov @ contrast.L)


def wald_test(fit, contrast):
    """
    Wald chi-square test of L'beta = 0 on one degree of freedom.

    Raises:
        FitError: the fit has not converged.
        DegenerateContrastError: L'SigmaL <= 0.
    """
    fit.require_converged()

    estimate = float(contrast.L @ fit.beta_hat)
    variance = contrast_variance(fit, contrast)
    if not variance > 0:
        raise DegenerateContrastError(
            f"Degenerate contrast variance {variance:.3g} for evaluator {contrast.j}."
        )

    statistic = estimate ** 2 / variance
    p_value = max(chisq1_sf(statistic), np.finfo(float).tiny)
    return TestResult(
        j=contrast.j,
        estimate=estimate,
        se=float(np.sqrt(variance)),
        statistic=statistic,
        p_value=float(p_value),
    )


def test_all(fit, kind=TRUNCATED, delta=DEFAULT_DELTA):
    """Tests every evaluator, ordered by evaluator index."""
    contrasts = make_contrasts(fit.M, kind, delta, fit.beta_hat)
    return [wald_test(fit, contrast) for contrast in contrasts]
