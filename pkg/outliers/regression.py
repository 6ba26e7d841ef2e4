"""
First-stage estimation of the evaluator effects.

fit_ols handles one measurement per participant; fit_gee handles repeated
measurements with a working correlation structure and the Liang-Zeger
sandwich covariance. Both are statsmodels fits wrapped into a FitResult
whose first M coefficients are the evaluator effects beta.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import statsmodels.api as sm
from scipy import linalg
from statsmodels.genmod import cov_struct

from .exceptions import FitError

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10

# Working correlation parameters are kept strictly inside their legal range.
CORRELATION_MARGIN = 1e-6


@dataclass(frozen=True, eq=False)
class WorkingCorrelation:
    kind: str = 'independent'
    params: float | np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ('independent', 'exchangeable', 'unstructured'):
            raise ValueError(f"Unknown working correlation '{self.kind}'.")

    def matrix(self, t):
        if self.kind == 'exchangeable':
            alpha = 0.0 if self.params is None else float(self.params)
            return (1.0 - alpha) * np.eye(t) + alpha * np.ones((t, t))
        if self.kind == 'unstructured' and self.params is not None:
            return np.asarray(self.params, dtype=float)[:t, :t]
        return np.eye(t)

    def describe(self):
        if self.params is None:
            return None
        if self.kind == 'exchangeable':
            return float(self.params)
        return np.asarray(self.params, dtype=float).tolist()


@dataclass(frozen=True)
class SolverControl:
    tol: float = 1e-8
    max_iter: int = 100


@dataclass(frozen=True, eq=False)
class FitResult:
    """
    theta = (beta over evaluators, gamma over participant covariates,
    eta over measurement covariates) with the covariance of theta-hat.
    """

    beta_hat: np.ndarray
    gamma_hat: np.ndarray
    eta_hat: np.ndarray
    beta_cov: np.ndarray
    full_cov: np.ndarray
    dispersion: float
    working_corr: WorkingCorrelation = field(default_factory=WorkingCorrelation)
    n_iterations: int = 0
    converged: bool = True
    engine: str = 'ols'
    cov_type: str = 'model'
    column_names: tuple = ()
    n_obs: int = 0
    naive_cov: np.ndarray | None = None

    @property
    def M(self):
        return self.beta_hat.shape[0]

    @property
    def evaluator_ids(self):
        names = self.column_names[:self.M]
        if len(names) < self.M:
            return tuple(str(j) for j in range(self.M))
        return tuple(name[len('evaluator['):-1] if name.startswith('evaluator[') else name for name in names)

    @property
    def theta(self):
        return np.concatenate([self.beta_hat, self.gamma_hat, self.eta_hat])

    def require_converged(self):
        if not self.converged:
            raise FitError(
                f"The {self.engine} fit did not converge after {self.n_iterations} iterations."
            )


def _check_rank(matrix, names):
    n, P = matrix.shape
    if n <= P:
        raise FitError(f"Insufficient degrees of freedom: {n} observations for {P} parameters.")

    _, r, pivots = linalg.qr(matrix, mode='economic', pivoting=True)
    diagonal = np.abs(np.diag(r))
    rank = int(np.sum(diagonal > RANK_TOLERANCE * diagonal[0])) if diagonal.size else 0
    if rank < P:
        offending = [names[index] if index < len(names) else str(index) for index in pivots[rank:]]
        raise FitError(
            f"Design matrix is rank deficient (rank {rank} < {P}); "
            f"offending columns: {', '.join(offending)}",
            columns=offending,
        )


def _symmetrize(cov):
    cov = 0.5 * (cov + cov.T)
    eigenvalues = np.linalg.eigvalsh(cov)
    floor = -1e-8 * np.linalg.norm(cov)
    if eigenvalues.size and eigenvalues[0] < floor:
        raise FitError(f"Covariance estimate is not positive semidefinite (eigenvalue {eigenvalues[0]:.3g}).")
    return cov


def _split(theta, M, p):
    return theta[:M].copy(), theta[M:M + p].copy(), theta[M + p:].copy()


def fit_ols(design, y, cov_type='model', p=None):
    """
    Least-squares fit of the no-intercept model, one row per participant.

    cov_type 'model' gives sigma^2 (X'X)^-1 with sigma^2 = RSS / (n - M - p);
    'hc0' gives the heteroskedasticity-consistent sandwich.
    `p` splits the non-evaluator coefficients into gamma (first p) and
    eta (the rest); by default they are all gamma.
    """
    if cov_type not in ('model', 'hc0'):
        raise ValueError(f"Unknown covariance type '{cov_type}'.")

    X = np.asarray(design.matrix, dtype=float)
    y = np.asarray(y, dtype=float)
    n, P = X.shape
    M = design.n_evaluators
    p = P - M if p is None else p

    _check_rank(X, design.column_names)

    results = sm.OLS(y, X).fit(cov_type='HC0' if cov_type == 'hc0' else 'nonrobust')
    sigma2 = float(results.scale)
    if sigma2 <= 0:
        logger.warning("Residual variance is zero; the data are fitted exactly.")

    cov = _symmetrize(np.asarray(results.cov_params(), dtype=float))
    beta, gamma, eta = _split(np.asarray(results.params, dtype=float), M, p)
    logger.debug(f"OLS fit: n={n}, parameters={P}, sigma^2={sigma2:.6g}")

    return FitResult(
        beta_hat=beta,
        gamma_hat=gamma,
        eta_hat=eta,
        beta_cov=cov[:M, :M].copy(),
        full_cov=cov,
        dispersion=sigma2,
        working_corr=WorkingCorrelation('independent'),
        n_iterations=1,
        converged=True,
        engine='ols',
        cov_type=cov_type,
        column_names=tuple(design.column_names),
        n_obs=n,
        naive_cov=sigma2 * np.asarray(results.normalized_cov_params, dtype=float),
    )


def _residuals(model):
    return [endog - expval for endog, (expval, _) in zip(model.endog_li, model.cached_means)]


def _dispersion(model):
    scale = float(model.estimate_scale())
    if scale <= 0:
        raise FitError("Residual dispersion is zero; the working covariance is singular.")
    return scale


class MomentExchangeable(cov_struct.Exchangeable):
    """
    Exchangeable structure whose alpha is the average within-cluster cross
    product of residuals over the dispersion, clipped into
    (-1 / (t_max - 1), 1). Single-measurement clusters contribute no pairs.
    """

    def update(self, params):
        residuals = _residuals(self.model)
        t_max = max(len(resid) for resid in residuals)
        pairs = sum(len(resid) * (len(resid) - 1) for resid in residuals)
        if pairs == 0 or t_max < 2:
            self.dep_params = 0.0
            return

        cross = sum(float(resid.sum() ** 2 - (resid ** 2).sum()) for resid in residuals)
        alpha = cross / (pairs * _dispersion(self.model))
        lower = -1.0 / (t_max - 1) + CORRELATION_MARGIN
        self.dep_params = float(np.clip(alpha, lower, 1.0 - CORRELATION_MARGIN))


class MomentUnstructured(cov_struct.CovStruct):
    """
    Unstructured correlation over the t aligned measurements of every
    cluster, estimated from the residual moment matrix.
    """

    def __init__(self, t):
        super().__init__()
        self.dep_params = np.eye(t)

    def update(self, params):
        resid = np.vstack(_residuals(self.model))
        moments = resid.T @ resid / resid.shape[0]
        scale = np.sqrt(np.diag(moments))
        if np.any(scale <= 0):
            raise FitError("Residual dispersion is zero; the working covariance is singular.")
        corr = moments / np.outer(scale, scale)
        np.fill_diagonal(corr, 1.0)
        if np.linalg.eigvalsh(corr)[0] <= CORRELATION_MARGIN:
            raise FitError(f"Working covariance of clusters of size {corr.shape[0]} is singular.")
        self.dep_params = corr

    def covariance_matrix(self, expval, index):
        return self.dep_params.copy(), True

    def summary(self):
        return f"Unstructured correlation:\n{self.dep_params}"


class EvaluatorGEE(sm.GEE):
    """
    Gaussian GEE that stops on the largest parameter change of a scoring
    step instead of the score norm.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.steps = []

    def _update_mean_params(self):
        update, score = super()._update_mean_params()
        if update is None:
            raise FitError("Working covariance is singular.")
        change = float(np.max(np.abs(update)))
        self.steps.append(change)
        logger.debug(f"GEE iteration {len(self.steps)}: max change {change:.3g}, "
                     f"alpha {self.cov_struct.dep_params}")
        # fit() compares the norm of the returned vector with ctol
        return update, np.array([change])


def _cov_struct(kind, t):
    if kind == 'exchangeable':
        return MomentExchangeable()
    if kind == 'unstructured':
        return MomentUnstructured(t)
    return cov_struct.Independence()


def _working_correlation(kind, structure):
    if kind == 'independent':
        return WorkingCorrelation('independent')
    if kind == 'exchangeable':
        return WorkingCorrelation('exchangeable', float(structure.dep_params))
    return WorkingCorrelation('unstructured', np.array(structure.dep_params, dtype=float))


def estimating_equation(dataset, design, fit):
    """
    sum_i D_i' V_i^-1 (Y_i - mu_i) evaluated at the fitted theta, using the
    fit's working correlation and dispersion.
    """
    X = np.asarray(design.matrix, dtype=float)
    resid = np.asarray(dataset.outcome, dtype=float) - X @ fit.theta
    bounds = np.cumsum(dataset.t_i)[:-1]
    score = np.zeros(X.shape[1])
    for X_i, r_i in zip(np.split(X, bounds), np.split(resid, bounds)):
        V = fit.dispersion * fit.working_corr.matrix(r_i.shape[0])
        score += X_i.T @ linalg.solve(V, r_i, assume_a='pos')
    return score


def fit_gee(dataset, design, corr=None, ctrl=None):
    """
    Solves the GEE with identity link and Gaussian variance, clusters being
    participants.

    Starts at the OLS solution; between scoring steps the dispersion and the
    working correlation parameters are re-estimated by moments. Stops when
    the largest parameter change drops below ctrl.tol, or after
    ctrl.max_iter steps with converged=False.

    Raises:
        FitError: rank deficiency, singular working covariance, or an
            unstructured correlation over clusters that cannot be aligned.
    """
    corr = corr or WorkingCorrelation('independent')
    ctrl = ctrl or SolverControl()
    kind = corr.kind

    X = np.asarray(design.matrix, dtype=float)
    y = np.asarray(dataset.outcome, dtype=float)
    n, P = X.shape
    M = design.n_evaluators
    p = dataset.p

    _check_rank(X, design.column_names)

    sizes = dataset.t_i
    t_max = int(sizes.max())
    if kind == 'unstructured':
        if np.unique(sizes).size > 1:
            raise FitError("Unstructured working correlation needs the same number of measurements per participant.")
        repeats = dataset.repeat.reshape(dataset.N, t_max)
        if np.any(repeats != repeats[0]):
            raise FitError("Unstructured working correlation needs the same repeat indices for every participant.")

    groups = np.repeat(np.arange(dataset.N), sizes)
    model = EvaluatorGEE(y, X, groups, family=sm.families.Gaussian(), cov_struct=_cov_struct(kind, t_max))
    start = linalg.lstsq(X, y)[0]
    if float(np.sum((y - X @ start) ** 2)) <= 0:
        raise FitError("Residual dispersion is zero; the working covariance is singular.")

    results = model.fit(maxiter=ctrl.max_iter, ctol=ctrl.tol, start_params=start,
                        cov_type='robust', ddof_scale=P)
    if results is None:
        raise FitError("The GEE sandwich covariance could not be computed.")

    iterations = len(model.steps)
    converged = bool(model.steps) and model.steps[-1] < ctrl.tol
    if not converged:
        logger.warning(f"GEE did not converge within {ctrl.max_iter} iterations.")

    dispersion = float(results.scale)
    if dispersion <= 0:
        raise FitError("Residual dispersion is zero; the working covariance is singular.")
    cov = _symmetrize(np.asarray(results.cov_robust, dtype=float))

    beta, gamma, eta = _split(np.asarray(results.params, dtype=float), M, p)
    logger.info(f"GEE ({kind}) fit: {dataset.N} clusters, {n} measurements, "
                f"{iterations} iterations, converged={converged}")

    return FitResult(
        beta_hat=beta,
        gamma_hat=gamma,
        eta_hat=eta,
        beta_cov=cov[:M, :M].copy(),
        full_cov=cov,
        dispersion=dispersion,
        working_corr=_working_correlation(kind, model.cov_struct),
        n_iterations=iterations,
        converged=converged,
        engine='gee',
        cov_type='sandwich',
        column_names=tuple(design.column_names),
        n_obs=n,
        naive_cov=np.asarray(results.cov_naive, dtype=float),
    )


def fit(dataset, design, engine='ols', corr='exchangeable', cov_type='model', ctrl=None):
    """Dispatches to the configured first-stage estimator."""
    if engine == 'ols':
        if np.any(dataset.t_i != 1):
            raise FitError("OLS needs one measurement per participant; use the GEE engine.")
        return fit_ols(design, dataset.outcome, cov_type=cov_type, p=dataset.p)
    if engine == 'gee':
        return fit_gee(dataset, design, WorkingCorrelation(corr), ctrl)
    raise ValueError(f"Unknown engine '{engine}'.")
