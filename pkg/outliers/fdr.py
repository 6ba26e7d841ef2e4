"""
False discovery rate estimation and outlier detection with
evaluator-specific significance levels.

Under the assumption that outlying evaluators are rare, the expected
number of false discoveries at target power phi is sum_j alpha_j(phi) and

    Q(phi) = sum_j alpha_j(phi) / R(phi),   R(phi) = #{j : p_j < alpha_j(phi)}

with Q = 0 when nothing is rejected.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from django.core.exceptions import ValidationError
from scipy.special import ndtr

from .calibration import (
    DEFAULT_POWER_GRID, calibrate_all, chisq1_isf, contrast_lambdas, solve_alphas,
)
from .inference import DEFAULT_DELTA, TRUNCATED, make_contrasts, wald_test
from .utils import ADJUST_RULES, FIXED_ALPHA, as_vector, round_half_up

logger = logging.getLogger(__name__)

PROSE = 'prose'
ALGORITHM = 'algorithm'

NO_FEASIBLE_POWER = 'no feasible power'


@dataclass(frozen=True)
class FdrEstimate:
    numerator: float
    denominator: int
    q_hat: float


@dataclass(frozen=True, eq=False)
class DecisionPoint:
    phi: float
    alphas: np.ndarray
    n_rejected: int
    q_hat: float


@dataclass(frozen=True, eq=False)
class DecisionCurve:
    points: list
    c: float
    kind: str
    delta: float
    evaluator_ids: tuple = ()
    pvalues: np.ndarray | None = None

    @property
    def phis(self):
        return np.array([point.phi for point in self.points])

    @property
    def q_hats(self):
        return np.array([point.q_hat for point in self.points])

    @property
    def n_rejected(self):
        return np.array([point.n_rejected for point in self.points])


@dataclass(frozen=True, eq=False)
class OutlierReport:
    """
    `rejected` and `adjusted_rejected` hold evaluator indices ordered by
    ascending p-value; `evaluator_ids` maps them back to the input ids.
    """

    evaluator_ids: tuple
    tests: list
    calibration: list
    rejected: tuple
    fdr: FdrEstimate
    adjusted_rejected: tuple
    c: float
    kind: str
    delta: float
    phi: float | None = None
    target_fdr: float | None = None
    adjust: bool = True
    adjust_rule: str = PROSE
    fixed_alpha: float = FIXED_ALPHA
    fixed_alpha_rejected: tuple = ()
    fixed_alpha_power: tuple = ()
    diagnostics: list = field(default_factory=list)

    @property
    def q_hat(self):
        return self.fdr.q_hat

    @property
    def pvalues(self):
        return np.array([test.p_value for test in self.tests])

    @property
    def alphas(self):
        return np.array([point.alpha for point in self.calibration])

    def ids(self, indices):
        return [self.evaluator_ids[j] for j in indices]


def _aligned(alphas, pvalues):
    alphas = as_vector(alphas, 'alphas')
    pvalues = as_vector(pvalues, 'pvalues')
    if alphas.shape != pvalues.shape:
        raise ValidationError(
            f"Significance levels and p-values are not aligned ({alphas.shape[0]} vs {pvalues.shape[0]})."
        )
    return alphas, pvalues


def estimate_fdr(alphas, pvalues):
    """Q = sum(alpha) / #{p < alpha}, and 0 when nothing is rejected."""
    alphas, pvalues = _aligned(alphas, pvalues)
    numerator = math.fsum(alphas.tolist())
    denominator = int(np.count_nonzero(pvalues < alphas))
    q_hat = numerator / denominator if denominator else 0.0
    return FdrEstimate(numerator=numerator, denominator=denominator, q_hat=q_hat)


def order_rejections(pvalues, alphas):
    """Indices with p_j < alpha_j, by ascending p-value (ties by index)."""
    alphas, pvalues = _aligned(alphas, pvalues)
    order = np.lexsort((np.arange(pvalues.shape[0]), pvalues))
    return tuple(int(j) for j in order if pvalues[j] < alphas[j])


def removal_count(k, q_hat, rule=PROSE):
    """How many of the k rejections the FDR-based adjustment drops."""
    if rule not in ADJUST_RULES:
        raise ValidationError(f"Unknown adjustment rule '{rule}'.")
    if not k * q_hat > 1:
        return 0
    extra = 1 if rule == ALGORITHM else 0
    return min(k, round_half_up(q_hat * k) + extra)


def adjust_rejections(rejected, pvalues, q_hat, rule=PROSE):
    """
    Drops the rejections with the largest p-values: round(Q k) of them
    under the 'prose' rule, one more under 'algorithm'; nothing unless
    k Q > 1.
    """
    pvalues = as_vector(pvalues, 'pvalues')
    ordered = sorted(rejected, key=lambda j: (pvalues[j], j))
    removed = removal_count(len(ordered), q_hat, rule)
    return tuple(ordered[:len(ordered) - removed])


def bh_procedure(pvalues, alpha):
    """
    Benjamini-Hochberg step-up: rejects the k smallest p-values for the
    largest k with p_(k) <= k alpha / M.
    """
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}.")
    pvalues = as_vector(pvalues, 'pvalues')
    if np.any(~np.isfinite(pvalues)) or np.any((pvalues < 0) | (pvalues > 1)):
        raise ValidationError("p-values must be numbers in [0, 1].")

    M = pvalues.shape[0]
    if M == 0:
        return frozenset()
    order = np.lexsort((np.arange(M), pvalues))
    passing = np.flatnonzero(pvalues[order] <= np.arange(1, M + 1) * alpha / M)
    if not passing.size:
        return frozenset()
    return frozenset(int(j) for j in order[:passing[-1] + 1])


def fixed_alpha_summary(pvalues, lambdas, alpha=FIXED_ALPHA):
    """
    Rejections of the unified-level tests p_j < alpha, and the range of
    power those tests have against |L'beta| = c.
    """
    pvalues = as_vector(pvalues, 'pvalues')
    rejected = order_rejections(pvalues, np.full(pvalues.shape, alpha))
    root_lam = np.sqrt(np.asarray(lambdas, dtype=float))
    z = math.sqrt(float(chisq1_isf(alpha)))
    power = ndtr(root_lam - z) + ndtr(-root_lam - z)
    power_range = (float(power.min()), float(power.max())) if power.size else ()
    return rejected, power_range


def _check_power(phi):
    if not 0 < phi < 1:
        raise ValidationError(f"Target power must lie in (0, 1), got {phi}.")


def decision_curve(fit, kind=TRUNCATED, delta=DEFAULT_DELTA, c=5.0, phi_grid=DEFAULT_POWER_GRID):
    """
    Estimated FDR along the power grid. The significance levels of every
    evaluator at every grid point are solved in one vectorized pass.
    """
    fit.require_converged()
    phis = np.asarray(phi_grid, dtype=float)
    if phis.ndim != 1 or not phis.size:
        raise ValidationError("The power grid is empty.")
    for phi in phis:
        _check_power(phi)

    contrasts = make_contrasts(fit.M, kind, delta, fit.beta_hat)
    pvalues = np.array([wald_test(fit, contrast).p_value for contrast in contrasts])
    lambdas = contrast_lambdas(fit, contrasts, c)
    alphas, _ = solve_alphas(phis[:, None], lambdas[None, :])

    points = []
    for phi, row in zip(phis, alphas):
        estimate = estimate_fdr(row, pvalues)
        points.append(DecisionPoint(phi=float(phi), alphas=row, n_rejected=estimate.denominator, q_hat=estimate.q_hat))

    logger.debug(f"Decision curve over {phis.size} grid points for {fit.M} evaluators")
    return DecisionCurve(points=points, c=float(c), kind=kind, delta=float(delta),
                         evaluator_ids=fit.evaluator_ids, pvalues=pvalues)


def detect(fit, kind=TRUNCATED, delta=DEFAULT_DELTA, c=5.0, phi=0.8, adjust=True, adjust_rule=PROSE,
           fixed_alpha=FIXED_ALPHA):
    """
    Declares evaluator j an outlier when p_j < alpha_j(phi).

    Raises:
        FitError: the fit has not converged.
        DegenerateContrastError: some contrast has zero variance.
    """
    _check_power(phi)
    if adjust_rule not in ADJUST_RULES:
        raise ValidationError(f"Unknown adjustment rule '{adjust_rule}'.")

    contrasts = make_contrasts(fit.M, kind, delta, fit.beta_hat)
    tests = [wald_test(fit, contrast) for contrast in contrasts]
    calibration = calibrate_all(fit, contrasts, c, phi)

    pvalues = np.array([test.p_value for test in tests])
    alphas = np.array([point.alpha for point in calibration])
    fdr = estimate_fdr(alphas, pvalues)
    rejected = order_rejections(pvalues, alphas)
    adjusted = adjust_rejections(rejected, pvalues, fdr.q_hat, adjust_rule) if adjust else rejected

    diagnostics = []
    if fdr.q_hat > 1:
        logger.warning(f"Estimated FDR {fdr.q_hat:.3f} exceeds 1 at power {phi}.")
        diagnostics.append(f"estimated FDR {fdr.q_hat:.6g} exceeds 1")

    fixed_rejected, power_range = fixed_alpha_summary(
        pvalues, [point.lam for point in calibration], fixed_alpha
    )

    logger.info(f"Power {phi}: {len(rejected)} rejection(s), estimated FDR {fdr.q_hat:.4f}, "
                f"{len(adjusted)} after adjustment")
    return OutlierReport(
        evaluator_ids=fit.evaluator_ids,
        tests=tests,
        calibration=calibration,
        rejected=rejected,
        fdr=fdr,
        adjusted_rejected=adjusted,
        c=float(c),
        kind=kind,
        delta=float(delta),
        phi=float(phi),
        adjust=adjust,
        adjust_rule=adjust_rule,
        fixed_alpha=fixed_alpha,
        fixed_alpha_rejected=fixed_rejected,
        fixed_alpha_power=power_range,
        diagnostics=diagnostics,
    )


def select_power(curve, target_q):
    """Largest grid power with at least one rejection and Q <= target_q, or None."""
    feasible = [point.phi for point in curve.points if point.n_rejected > 0 and point.q_hat <= target_q]
    return max(feasible) if feasible else None


def detect_at_fdr(fit, kind=TRUNCATED, delta=DEFAULT_DELTA, c=5.0, target_q=0.5, phi_grid=DEFAULT_POWER_GRID,
                  adjust=True, adjust_rule=PROSE, fixed_alpha=FIXED_ALPHA):
    """
    Runs detect at the largest power on the grid whose estimated FDR stays
    within target_q. Returns an empty report with a 'no feasible power'
    diagnostic when no grid point qualifies.
    """
    if target_q < 0:
        raise ValidationError(f"Target FDR must be non-negative, got {target_q}.")

    curve = decision_curve(fit, kind, delta, c, phi_grid)
    phi = select_power(curve, target_q)
    if phi is not None:
        report = detect(fit, kind, delta, c, phi, adjust, adjust_rule, fixed_alpha)
        return replace(report, target_fdr=float(target_q))

    logger.warning(f"No grid power reaches an estimated FDR of {target_q} with any rejection.")
    contrasts = make_contrasts(fit.M, kind, delta, fit.beta_hat)
    tests = [wald_test(fit, contrast) for contrast in contrasts]
    fixed_rejected, power_range = fixed_alpha_summary(
        [test.p_value for test in tests], contrast_lambdas(fit, contrasts, c), fixed_alpha
    )
    return OutlierReport(
        evaluator_ids=fit.evaluator_ids,
        tests=tests,
        calibration=[],
        rejected=(),
        fdr=FdrEstimate(numerator=0.0, denominator=0, q_hat=0.0),
        adjusted_rejected=(),
        c=float(c),
        kind=kind,
        delta=float(delta),
        target_fdr=float(target_q),
        adjust=adjust,
        adjust_rule=adjust_rule,
        fixed_alpha=fixed_alpha,
        fixed_alpha_rejected=fixed_rejected,
        fixed_alpha_power=power_range,
        diagnostics=[f"{NO_FEASIBLE_POWER} for target FDR {target_q:g}"],
    )


def readjust(report):
    """Re-applies the adjustment to the stored rejections with the stored Q."""
    if not report.adjust:
        return report
    adjusted = adjust_rejections(report.rejected, report.pvalues, report.q_hat, report.adjust_rule)
    return replace(report, adjusted_rejected=adjusted)


def verify_report(report, tol=1e-8):
    """
    Re-derives a report's decision from its stored state: alpha_j from the
    stored lambda_j and phi, the rejections, the estimated FDR and the
    adjusted set. Returns a list of mismatch descriptions, empty when the
    report is consistent.
    """
    mismatches = []
    if not report.calibration:
        if report.rejected or report.adjusted_rejected:
            mismatches.append("rejections recorded without calibration")
        return mismatches

    pvalues, alphas = report.pvalues, report.alphas
    lambdas = np.array([point.lam for point in report.calibration])
    phi = report.calibration[0].phi

    solved, _ = solve_alphas(phi, lambdas)
    drift = np.abs(solved - alphas)
    for j in np.flatnonzero(drift > tol):
        mismatches.append(f"alpha for evaluator {report.evaluator_ids[j]} re-solves to {solved[j]!r}, "
                          f"stored {alphas[j]!r}")

    rejected = order_rejections(pvalues, alphas)
    if rejected != tuple(report.rejected):
        mismatches.append(f"rejections {report.ids(rejected)} differ from stored {report.ids(report.rejected)}")

    fdr = estimate_fdr(alphas, pvalues)
    if abs(fdr.q_hat - report.q_hat) > tol or fdr.denominator != report.fdr.denominator:
        mismatches.append(f"estimated FDR {fdr.q_hat!r} differs from stored {report.q_hat!r}")

    adjusted = adjust_rejections(rejected, pvalues, fdr.q_hat, report.adjust_rule) if report.adjust else rejected
    if adjusted != tuple(report.adjusted_rejected):
        mismatches.append(f"adjusted rejections {report.ids(adjusted)} differ from stored "
                          f"{report.ids(report.adjusted_rejected)}")

    for message in mismatches:
        logger.warning(f"Report verification: {message}")
    return mismatches

