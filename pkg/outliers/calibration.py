"""
Noncentral chi-square machinery on one degree of freedom, and the
inversion of the power formula

    phi = 1 - F_{chi2_1(lambda)}(chi2_{1, 1 - alpha})

into evaluator-specific significance levels alpha_j(phi), with
lambda_j = c^2 / (L_j' Sigma L_j).
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from django.core.exceptions import ValidationError
from scipy import special, stats

from .exceptions import DegenerateContrastError
from .utils import parse_grid

logger = logging.getLogger(__name__)

DEFAULT_POWER_GRID = tuple(parse_grid('0.10:0.95:0.01'))

# Bracket of the significance level solve
LOWER_ALPHA = 1e-16
UPPER_ALPHA = 1.0 - 1e-16
MAX_BISECTIONS = 60

# Poisson tail mass left out of the mixture series
SERIES_TAIL = 1e-12

OK = 'ok'
SATURATED = 'saturated'
DEGENERATE = 'degenerate'


class AlphaSolution(NamedTuple):
    alpha: float
    flag: str


@dataclass(frozen=True)
class CalibrationPoint:
    j: int
    c: float
    phi: float
    lam: float
    alpha: float
    flag: str = OK


def _check_probability(value, name):
    if not 0 < value < 1:
        raise ValidationError(f"{name} must lie in (0, 1), got {value}.")


def chisq1_cdf(x):
    return special.gammainc(0.5, np.asarray(x, dtype=float) / 2.0)


def chisq1_sf(x):
    """Upper tail of the central chi-square on 1 df, 2 Phi(-sqrt(x))."""
    return 2.0 * special.ndtr(-np.sqrt(np.asarray(x, dtype=float)))


def chisq1_isf(alpha):
    """Critical value chi2_{1, 1 - alpha}, accurate for tiny alpha."""
    return special.ndtri(np.asarray(alpha, dtype=float) / 2.0) ** 2


def chisq1_quantile(p):
    """
    x with P(chi2_1 <= x) = p. The lower half inverts the regularized
    incomplete gamma function, the upper half goes through the normal
    quantile of the complementary probability.
    """
    _check_probability(p, 'p')
    if p <= 0.5:
        return float(2.0 * special.gammaincinv(0.5, p))
    return float(chisq1_isf(1.0 - p))


def _check_noncentral_args(x, lam):
    if x < 0 or lam < 0:
        raise ValidationError(f"Noncentral chi-square arguments must be non-negative, got x={x}, lambda={lam}.")


def _poisson_weights(lam):
    mu = lam / 2.0
    kmax = int(stats.poisson.isf(SERIES_TAIL, mu)) + 1
    k = np.arange(kmax + 1)
    return k, stats.poisson.pmf(k, mu)


def noncentral_chisq1_cdf(x, lam, method='series'):
    """
    F_{chi2_1(lambda)}(x).

    The 'series' method sums the Poisson mixture of central chi-squares on
    1 + 2k degrees of freedom until the remaining Poisson mass is below
    1e-12; 'normal' uses Phi(sqrt(x) - sqrt(lambda)) - Phi(-sqrt(x) - sqrt(lambda)).
    """
    _check_noncentral_args(x, lam)

    if method == 'normal':
        root_x, root_lam = np.sqrt(x), np.sqrt(lam)
        return float(special.ndtr(root_x - root_lam) - special.ndtr(-root_x - root_lam))
    if method != 'series':
        raise ValueError(f"Unknown method '{method}'.")

    if lam == 0:
        return float(chisq1_cdf(x))
    k, weights = _poisson_weights(lam)
    return float(np.sum(weights * special.gammainc(k + 0.5, x / 2.0)))


def noncentral_chisq1_sf(x, lam):
    """1 - F_{chi2_1(lambda)}(x), summed on the upper tails."""
    _check_noncentral_args(x, lam)
    if lam == 0:
        return float(chisq1_sf(x))
    k, weights = _poisson_weights(lam)
    return float(np.sum(weights * special.gammaincc(k + 0.5, x / 2.0)))


def power_given_alpha(alpha, lam):
    _check_probability(alpha, 'alpha')
    if lam < 0:
        raise ValidationError(f"lambda must be non-negative, got {lam}.")
    return noncentral_chisq1_sf(float(chisq1_isf(alpha)), lam)


# Power of the 1-df test with critical value z^2, as a function of z.
def _power_at(z, root_lam):
    return special.ndtr(root_lam - z) + special.ndtr(-root_lam - z)


Z_LOWER = float(-special.ndtri(UPPER_ALPHA / 2.0))
Z_UPPER = float(-special.ndtri(LOWER_ALPHA / 2.0))


def solve_alphas(phi, lam):
    """
    Vectorized inverse of the power formula. phi and lam broadcast together.

    Bisects on the critical value z = Phi^-1(1 - alpha / 2), which is a
    monotone reparametrization of alpha over the bracket
    (1e-16, 1 - 1e-16). Returns (alpha, flags): 'saturated' where the
    target power is already reached at the bracket end, 'degenerate'
    where lambda is 0 and alpha = phi.
    """
    phi, lam = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(lam, dtype=float))
    if np.any((phi <= 0) | (phi >= 1)):
        raise ValidationError("Target power must lie in (0, 1).")
    if np.any(lam < 0):
        raise ValidationError("lambda must be non-negative.")

    root_lam = np.sqrt(lam)
    lo = np.full(phi.shape, Z_LOWER)
    hi = np.full(phi.shape, Z_UPPER)
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        above = _power_at(mid, root_lam) > phi
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)

    alpha = 2.0 * special.ndtr(-0.5 * (lo + hi))
    flags = np.full(phi.shape, OK, dtype=object)

    saturated_low = _power_at(Z_UPPER, root_lam) >= phi
    saturated_high = _power_at(Z_LOWER, root_lam) <= phi
    alpha = np.where(saturated_low, LOWER_ALPHA, alpha)
    alpha = np.where(saturated_high, UPPER_ALPHA, alpha)
    flags[saturated_low | saturated_high] = SATURATED

    degenerate = lam == 0
    alpha = np.where(degenerate, phi, alpha)
    flags[degenerate] = DEGENERATE

    return alpha, flags


def alpha_given_power(phi, lam, tol=1e-9):
    """
    Significance level alpha with power_given_alpha(alpha, lam) = phi.

    lambda = 0 makes the power identical to alpha, so alpha = phi comes
    back flagged 'degenerate'. When even alpha = 1e-16 gives at least the
    requested power the lower bracket comes back flagged 'saturated'.
    """
    _check_probability(phi, 'phi')
    if lam < 0:
        raise ValidationError(f"lambda must be non-negative, got {lam}.")

    alpha, flags = solve_alphas(phi, lam)
    alpha, flag = float(alpha), str(flags[()])
    if flag == DEGENERATE:
        logger.warning("lambda = 0: power equals alpha, returning alpha = phi.")
    elif flag == SATURATED:
        logger.warning(f"Power {phi} is reached at the bracket end for lambda = {lam:.6g}.")
    elif abs(power_given_alpha(alpha, lam) - phi) >= tol:
        logger.warning(f"alpha solve for phi={phi}, lambda={lam:.6g} missed the tolerance {tol:g}.")
    return AlphaSolution(alpha=alpha, flag=flag)


def contrast_lambdas(fit, contrasts, c):
    if not c > 0:
        raise ValidationError(f"The alternative magnitude c must be positive, got {c}.")

    variances = np.array([contrast.L @ fit.beta_cov @ contrast.L for contrast in contrasts])
    degenerate = np.flatnonzero(~(variances > 0))
    if degenerate.size:
        raise DegenerateContrastError(
            f"Degenerate contrast variance for evaluator(s) {', '.join(map(str, degenerate))}."
        )
    return c ** 2 / variances


def calibrate_all(fit, contrasts, c, phi):
    """
    lambda_j and alpha_j(phi) for every contrast.

    Raises:
        FitError: the fit has not converged.
        DegenerateContrastError: some L_j' Sigma L_j <= 0.
    """
    fit.require_converged()
    _check_probability(phi, 'phi')

    lambdas = contrast_lambdas(fit, contrasts, c)
    alphas, flags = solve_alphas(phi, lambdas)
    if np.any(flags == SATURATED):
        logger.warning(f"{int(np.sum(flags == SATURATED))} evaluator(s) reach power {phi} at the bracket end.")

    return [
        CalibrationPoint(j=contrast.j, c=float(c), phi=float(phi), lam=float(lam), alpha=float(alpha), flag=str(flag))
        for contrast, lam, alpha, flag in zip(contrasts, lambdas, alphas, flags)
    ]
