"""
Monte Carlo study of the detection procedure on synthetic hearing-threshold
data: M evaluators each measure n participants, a handful of evaluators are
shifted upwards, and the outcome depends on age, age squared and a
three-level self-reported hearing status.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from .calibration import DEFAULT_POWER_GRID
from .dataset import Dataset, build_design
from .exceptions import NumericalError, SimulationError
from .fdr import PROSE, adjust_rejections, decision_curve, order_rejections
from .inference import TRUNCATED
from .regression import fit
from .utils import FIXED_ALPHA

logger = logging.getLogger(__name__)

COVARIATE_NAMES = ('age', 'age_sq', 'status[very good]', 'status[little trouble]')
EAR_COLUMN = 'ear'

# Evaluators 1-5 at 75, 6-8 at 70, everybody else at the normal level
DEFAULT_OUTLIERS = tuple((j, 75.0) for j in range(5)) + tuple((j, 70.0) for j in range(5, 8))


@dataclass(frozen=True)
class SimConfig:
    M: int = 100
    n: int = 40
    outlier_spec: tuple = DEFAULT_OUTLIERS
    normal_beta: float = 67.0
    age_mean: float = 56.6
    age_sd: float = 4.4
    # excellent (reference), very good, a little trouble
    status_probs: tuple = (0.31, 0.44, 0.25)
    gamma: tuple = (-2.7, 0.03, 3.3, 10.3)
    sigma: float = 8.0
    n_replicates: int = 300
    c: float = 5.0
    kind: str = TRUNCATED
    delta: float = 0.1
    base_seed: int = 0
    phi_grid: tuple = DEFAULT_POWER_GRID
    fixed_alpha: float = FIXED_ALPHA
    adjust_rule: str = PROSE
    paired: bool = False
    rho: float = 0.0
    ear_shift: float = 0.0
    corr: str = 'exchangeable'
    max_failure_rate: float = 0.05

    def __post_init__(self):
        probs = np.asarray(self.status_probs, dtype=float)
        if probs.shape != (3,) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValidationError("Status probabilities must be three non-negative numbers summing to 1.")
        indices = [j for j, _ in self.outlier_spec]
        if len(set(indices)) != len(indices):
            raise ValidationError("Outlier evaluator indices must be distinct.")
        if any(not 0 <= j < self.M for j in indices):
            raise ValidationError(f"Outlier evaluator indices must lie in 0..{self.M - 1}.")
        if len(self.gamma) != len(COVARIATE_NAMES):
            raise ValidationError(f"Expected {len(COVARIATE_NAMES)} covariate coefficients.")
        if self.M < 2 or self.n < 1 or self.n_replicates < 1:
            raise ValidationError("Need at least 2 evaluators, 1 participant each and 1 replicate.")
        if self.sigma < 0:
            raise ValidationError(f"sigma must be non-negative, got {self.sigma}.")
        if not -1 < self.rho < 1:
            raise ValidationError(f"rho must lie in (-1, 1), got {self.rho}.")

    @property
    def beta(self):
        beta = np.full(self.M, float(self.normal_beta))
        for j, value in self.outlier_spec:
            beta[j] = value
        return beta

    @property
    def outliers(self):
        return np.array(sorted(j for j, _ in self.outlier_spec), dtype=np.int64)

    @property
    def normal(self):
        """Evaluators whose rejection is a false discovery."""
        return np.setdiff1d(np.arange(self.M), self.outliers)

    def seed(self, replicate):
        return self.base_seed + replicate


@dataclass(frozen=True, eq=False)
class ReplicateOutcome:
    replicate: int
    seed: int
    q_hat: np.ndarray
    fdr_emp: np.ndarray
    fdr_emp_adjusted: np.ndarray
    fdr_fixed: float
    rejected: np.ndarray
    adjusted: np.ndarray
    fixed_rejected: np.ndarray
    noise_ratio: float


@dataclass(frozen=True, eq=False)
class SimSummary:
    """
    Replicate means. Rejection proportions are (grid points, M) arrays: the
    true positive proportion for planted evaluators, the false positive
    proportion for the others.
    """

    config: SimConfig
    phis: np.ndarray
    fdr_est_mean: np.ndarray
    fdr_emp_mean: np.ndarray
    fdr_emp_adjusted_mean: np.ndarray
    fdr_alpha05: float
    proportions: np.ndarray
    adjusted_proportions: np.ndarray
    alpha05_proportions: np.ndarray
    noise_ratio: float
    n_replicates: int
    failures: int = 0
    seeds: list = field(default_factory=list)
    evaluator_ids: tuple = ()

    @property
    def n_succeeded(self):
        return self.n_replicates - self.failures

    def fdr_at(self, phi):
        return float(self.fdr_emp_mean[self._grid_index(phi)])

    def fdr_est_at(self, phi):
        return float(self.fdr_est_mean[self._grid_index(phi)])

    def _grid_index(self, phi):
        index = int(np.argmin(np.abs(self.phis - phi)))
        if abs(self.phis[index] - phi) > 1e-9:
            raise ValueError(f"Power {phi} is not on the simulation grid.")
        return index

    def proportion_at(self, phi, evaluators, adjusted=False):
        table = self.adjusted_proportions if adjusted else self.proportions
        return table[self._grid_index(phi), np.asarray(evaluators)]


def _id_width(count, minimum):
    return max(minimum, len(str(count)))


def evaluator_ids(M):
    width = _id_width(M, 3)
    return tuple(f"{j + 1:0{width}d}" for j in range(M))


def _participants(config, rng):
    """Draws the participant covariates; evaluator j measures participants j n .. (j + 1) n - 1."""
    N = config.M * config.n
    age = rng.normal(config.age_mean, config.age_sd, size=N)
    status = rng.choice(3, size=N, p=np.asarray(config.status_probs, dtype=float))
    covariates = np.column_stack([
        age,
        age ** 2,
        (status == 1).astype(float),
        (status == 2).astype(float),
    ])
    evaluator = np.repeat(np.arange(config.M, dtype=np.int64), config.n)
    mean = config.beta[evaluator] + covariates @ np.asarray(config.gamma, dtype=float)
    return N, evaluator, covariates, mean


def _participant_ids(N):
    width = _id_width(N, 5)
    return tuple(f"p{i:0{width}d}" for i in range(N))


def generate_dataset(config, replicate_seed):
    """One measurement per participant, deterministic given the seed."""
    rng = np.random.Generator(np.random.Philox(replicate_seed))
    N, evaluator, covariates, mean = _participants(config, rng)
    outcome = mean + rng.normal(0.0, config.sigma, size=N)

    return Dataset(
        participant_ids=_participant_ids(N),
        evaluator_ids=evaluator_ids(config.M),
        participant=np.arange(N, dtype=np.int64),
        evaluator=evaluator,
        repeat=np.ones(N, dtype=np.int64),
        outcome=outcome,
        covariates=covariates,
        measurement_covariates=np.empty((N, 0)),
        covariate_names=COVARIATE_NAMES,
        source=f"simulated:{replicate_seed}",
    )


def generate_paired_dataset(config, rho, replicate_seed):
    """
    Two measurements (ears) per participant sharing covariates and
    evaluator, with bivariate normal residuals of correlation rho. The
    second ear is shifted by config.ear_shift.
    """
    if not -1 < rho < 1:
        raise ValidationError(f"rho must lie in (-1, 1), got {rho}.")

    rng = np.random.Generator(np.random.Philox(replicate_seed))
    N, evaluator, covariates, mean = _participants(config, rng)
    first = rng.standard_normal(N)
    second = rho * first + np.sqrt(1.0 - rho ** 2) * rng.standard_normal(N)
    residuals = config.sigma * np.column_stack([first, second])

    ear = np.tile([0.0, 1.0], N)
    outcome = np.repeat(mean, 2) + residuals.reshape(-1) + config.ear_shift * ear

    return Dataset(
        participant_ids=_participant_ids(N),
        evaluator_ids=evaluator_ids(config.M),
        participant=np.repeat(np.arange(N, dtype=np.int64), 2),
        evaluator=np.repeat(evaluator, 2),
        repeat=np.tile(np.array([1, 2], dtype=np.int64), N),
        outcome=outcome,
        covariates=np.repeat(covariates, 2, axis=0),
        measurement_covariates=ear[:, None],
        covariate_names=COVARIATE_NAMES,
        measurement_covariate_names=(EAR_COLUMN,),
        source=f"simulated-paired:{replicate_seed}",
    )


def _empirical_fdr(rejected, normal):
    if not len(rejected):
        return 0.0
    return float(np.isin(rejected, normal).sum()) / len(rejected)


def run_replicate(config, replicate):
    """
    Generates, fits and runs the decision curve for one replicate.
    Returns None when the fit fails numerically.
    """
    seed = config.seed(replicate)
    if config.paired:
        dataset = generate_paired_dataset(config, config.rho, seed)
        engine = 'gee'
    else:
        dataset = generate_dataset(config, seed)
        engine = 'ols'

    try:
        result = fit(dataset, build_design(dataset), engine=engine, corr=config.corr)
        curve = decision_curve(result, config.kind, config.delta, config.c, config.phi_grid)
    except NumericalError as e:
        logger.warning(f"Replicate {replicate} (seed {seed}) failed: {e}")
        return None

    normal = config.normal
    pvalues = curve.pvalues
    G, M = len(curve.points), config.M
    rejected = np.zeros((G, M), dtype=bool)
    adjusted = np.zeros((G, M), dtype=bool)
    fdr_emp = np.zeros(G)
    fdr_emp_adjusted = np.zeros(G)
    for g, point in enumerate(curve.points):
        flagged = order_rejections(pvalues, point.alphas)
        kept = adjust_rejections(flagged, pvalues, point.q_hat, config.adjust_rule)
        rejected[g, list(flagged)] = True
        adjusted[g, list(kept)] = True
        fdr_emp[g] = _empirical_fdr(flagged, normal)
        fdr_emp_adjusted[g] = _empirical_fdr(kept, normal)

    fixed = order_rejections(pvalues, np.full(M, config.fixed_alpha))
    fixed_rejected = np.zeros(M, dtype=bool)
    fixed_rejected[list(fixed)] = True

    noise_ratio = config.sigma ** 2 / float(np.var(dataset.outcome, ddof=1))
    logger.debug(f"Replicate {replicate}: noise ratio {noise_ratio:.3f}")

    return ReplicateOutcome(
        replicate=replicate,
        seed=seed,
        q_hat=curve.q_hats,
        fdr_emp=fdr_emp,
        fdr_emp_adjusted=fdr_emp_adjusted,
        fdr_fixed=_empirical_fdr(fixed, normal),
        rejected=rejected,
        adjusted=adjusted,
        fixed_rejected=fixed_rejected,
        noise_ratio=noise_ratio,
    )


def run_study(config, threads=None):
    """
    Runs every replicate, threads workers at a time, and averages in
    replicate order.

    Raises:
        SimulationError: more than config.max_failure_rate of the
            replicates failed.
    """
    threads = threads or getattr(settings, 'EVALGUARD_THREADS', 1)
    replicates = range(config.n_replicates)
    logger.info(f"Simulating {config.n_replicates} replicates (sigma={config.sigma}, "
                f"paired={config.paired}) on {threads} thread(s)")

    with ThreadPoolExecutor(max_workers=threads) as executor:
        outcomes = list(executor.map(partial(run_replicate, config), replicates))

    done = [outcome for outcome in outcomes if outcome is not None]
    failures = len(outcomes) - len(done)
    if failures > config.max_failure_rate * config.n_replicates or not done:
        raise SimulationError(
            f"{failures} of {config.n_replicates} replicates failed.",
            failures=failures,
            replicates=config.n_replicates,
        )
    if failures:
        logger.warning(f"{failures} replicate(s) failed and were excluded.")

    def mean(name):
        return np.mean(np.stack([getattr(outcome, name) for outcome in done]), axis=0)

    return SimSummary(
        config=config,
        phis=np.asarray(config.phi_grid, dtype=float),
        fdr_est_mean=mean('q_hat'),
        fdr_emp_mean=mean('fdr_emp'),
        fdr_emp_adjusted_mean=mean('fdr_emp_adjusted'),
        fdr_alpha05=float(mean('fdr_fixed')),
        proportions=mean('rejected'),
        adjusted_proportions=mean('adjusted'),
        alpha05_proportions=mean('fixed_rejected'),
        noise_ratio=float(mean('noise_ratio')),
        n_replicates=config.n_replicates,
        failures=failures,
        seeds=[outcome.seed for outcome in done],
        evaluator_ids=evaluator_ids(config.M),
    )
