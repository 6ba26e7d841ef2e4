"""
File artifacts of the pipeline: fit.json and beta_table.csv from `fit`,
the decision curve CSV, report.json / report.txt from `detect`, the
simulation CSV bundle and the optional SVG plots.

JSON is written with sorted keys and floats in repr form, CSV through
pandas, SVG with a fixed hash salt and no date, so that identical inputs
give identical files.
"""

import json
import logging
import os
from dataclasses import asdict

import matplotlib
import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from .calibration import CalibrationPoint  # noqa: E402
from .fdr import FdrEstimate, OutlierReport  # noqa: E402
from .inference import TestResult, truncated_mean  # noqa: E402
from .regression import FitResult, WorkingCorrelation  # noqa: E402

logger = logging.getLogger(__name__)

FIT_FILE = 'fit.json'
BETA_TABLE_FILE = 'beta_table.csv'
CURVE_FILE = 'fdr_curve.csv'
CURVE_PLOT_FILE = 'curve.svg'
BETA_PLOT_FILE = 'beta.svg'
REPORT_FILE = 'report.json'
REPORT_TEXT_FILE = 'report.txt'
SIM_CURVE_FILE = 'fdr_curve.csv'
SIM_PROPORTIONS_FILE = 'proportions.csv'
SIM_ALPHA05_FILE = 'alpha05_proportions.csv'
SIM_MANIFEST_FILE = 'manifest.json'
SIM_PLOT_FILE = 'simulation.svg'

SVG_SALT = 'evalguard'

# Reference lines of the decision plot
REFERENCE_POWER = 0.8
REFERENCE_FDR = 0.5


def _prepare(out_dir, name):
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


def _write_json(path, payload):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write('\n')
    return path


def _read_json(path, what):
    if not os.path.isfile(path):
        raise ValidationError(f"{what} not found: {path}")
    try:
        with open(path, encoding='utf-8') as f:
            return json.load(f)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValidationError(f"Could not parse {what} {path}: {e}")


def _matrix(value):
    return None if value is None else np.asarray(value, dtype=float).tolist()


def fit_payload(fit, dataset=None):
    payload = {
        'engine': fit.engine,
        'cov_type': fit.cov_type,
        'converged': bool(fit.converged),
        'n_iterations': int(fit.n_iterations),
        'n_obs': int(fit.n_obs),
        'dispersion': float(fit.dispersion),
        'working_correlation': {
            'kind': fit.working_corr.kind,
            'params': fit.working_corr.describe(),
        },
        'column_names': list(fit.column_names),
        'evaluator_ids': list(fit.evaluator_ids),
        'beta_hat': _matrix(fit.beta_hat),
        'gamma_hat': _matrix(fit.gamma_hat),
        'eta_hat': _matrix(fit.eta_hat),
        'covariance': _matrix(fit.full_cov),
        'naive_covariance': _matrix(fit.naive_cov),
    }
    if dataset is not None:
        payload['data'] = {
            'source': dataset.source,
            'measurements': len(dataset),
            'participants': dataset.N,
            'participants_per_evaluator': dataset.n_j.tolist(),
        }
    return payload


def save_fit(fit, out_dir, dataset=None, delta=0.1):
    """Writes fit.json and beta_table.csv; returns their paths."""
    fit_path = _write_json(_prepare(out_dir, FIT_FILE), fit_payload(fit, dataset))
    table_path = _prepare(out_dir, BETA_TABLE_FILE)
    beta_table(fit, delta).to_csv(table_path, index=False)
    logger.info(f"Wrote {fit_path} and {table_path}")
    return fit_path, table_path


def load_fit(path):
    """
    Rebuilds a FitResult from fit.json.

    Raises:
        ValidationError: the file is missing or malformed.
    """
    payload = _read_json(path, 'Fit artifact')
    try:
        beta_hat = np.asarray(payload['beta_hat'], dtype=float)
        covariance = np.asarray(payload['covariance'], dtype=float)
        M = beta_hat.shape[0]
        corr = payload['working_correlation']
        params = corr['params']
        if isinstance(params, list):
            params = np.asarray(params, dtype=float)
        naive = payload.get('naive_covariance')
        return FitResult(
            beta_hat=beta_hat,
            gamma_hat=np.asarray(payload['gamma_hat'], dtype=float),
            eta_hat=np.asarray(payload['eta_hat'], dtype=float),
            beta_cov=covariance[:M, :M].copy(),
            full_cov=covariance,
            dispersion=float(payload['dispersion']),
            working_corr=WorkingCorrelation(corr['kind'], params),
            n_iterations=int(payload['n_iterations']),
            converged=bool(payload['converged']),
            engine=payload['engine'],
            cov_type=payload['cov_type'],
            column_names=tuple(payload['column_names']),
            n_obs=int(payload['n_obs']),
            naive_cov=None if naive is None else np.asarray(naive, dtype=float),
        )
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ValidationError(f"Malformed fit artifact {path}: {e}")


def beta_table(fit, delta=0.1):
    """Evaluator effects centered at the mean and at the truncated mean."""
    beta = fit.beta_hat
    return pd.DataFrame({
        'evaluator': list(fit.evaluator_ids),
        'beta_hat': beta,
        'se': np.sqrt(np.clip(np.diag(fit.beta_cov), 0.0, None)),
        'centered_mean': beta - float(np.mean(beta)),
        'centered_truncated': beta - truncated_mean(beta, delta),
    })


def curve_frame(curve):
    frame = pd.DataFrame({
        'phi': curve.phis,
        'q_hat': curve.q_hats,
        'n_rejected': curve.n_rejected,
    })
    alphas = np.array([point.alphas for point in curve.points])
    # evaluator j is column alpha_<j>, 1-based in beta_table.csv order
    for position in range(alphas.shape[1]):
        frame[f"alpha_{position + 1}"] = alphas[:, position]
    return frame


def save_curve(curve, out_dir):
    path = _prepare(out_dir, CURVE_FILE)
    curve_frame(curve).to_csv(path, index=False)
    logger.info(f"Wrote {path}")
    return path


def report_payload(report):
    calibration = {point.j: point for point in report.calibration}
    evaluators = []
    for test in report.tests:
        point = calibration.get(test.j)
        evaluators.append({
            'id': report.evaluator_ids[test.j],
            'estimate': test.estimate,
            'se': test.se,
            'statistic': test.statistic,
            'p_value': test.p_value,
            'lambda': None if point is None else point.lam,
            'alpha': None if point is None else point.alpha,
            'flag': None if point is None else point.flag,
        })

    return {
        'settings': {
            'c': report.c,
            'phi': report.phi,
            'target_fdr': report.target_fdr,
            'contrast': report.kind,
            'delta': report.delta,
            'adjust': report.adjust,
            'adjust_rule': report.adjust_rule,
        },
        'evaluators': evaluators,
        'rejected': report.ids(report.rejected),
        'adjusted_rejected': report.ids(report.adjusted_rejected),
        'fdr': {
            'numerator': report.fdr.numerator,
            'denominator': report.fdr.denominator,
            'q_hat': report.fdr.q_hat,
        },
        'fixed_alpha': {
            'alpha': report.fixed_alpha,
            'rejected': report.ids(report.fixed_alpha_rejected),
            'power_range': list(report.fixed_alpha_power),
        },
        'diagnostics': list(report.diagnostics),
    }


def _join(ids):
    return ', '.join(ids) if ids else '-'


def report_text(report):
    """Summary in the layout of an outlier table, followed by per-evaluator rows."""
    phi = '-' if report.phi is None else f"{report.phi:.2f}"
    lines = [
        f"Contrast: {report.kind} (delta {report.delta:g}), c = {report.c:g}, "
        f"adjustment: {report.adjust_rule if report.adjust else 'off'}",
    ]
    if report.target_fdr is not None:
        lines.append(f"Target FDR: {report.target_fdr:g}")
    lines += [
        '',
        f"{'Power':<22}{'FDR':<8}{'Outliers':<40}Adjusted outliers",
        f"{phi:<22}{report.q_hat:<8.2f}{_join(report.ids(report.rejected)):<40}"
        f"{_join(report.ids(report.adjusted_rejected))}",
    ]
    if report.fixed_alpha_power:
        low, high = report.fixed_alpha_power
        label = f"{low:.2f}-{high:.2f} (alpha={report.fixed_alpha:g})"
        lines.append(f"{label:<22}{'-':<8}"
                     f"{_join(report.ids(report.fixed_alpha_rejected)):<40}-")
    for message in report.diagnostics:
        lines.append(f"Note: {message}")

    lines += ['', f"{'evaluator':<16}{'estimate':>12}{'se':>10}{'p_value':>12}{'alpha':>12}  decision"]
    alphas = {point.j: point.alpha for point in report.calibration}
    rejected, adjusted = set(report.rejected), set(report.adjusted_rejected)
    for test in report.tests:
        alpha = alphas.get(test.j)
        threshold = '-' if alpha is None else f"{alpha:.4g}"
        decision = 'outlier' if test.j in adjusted else ('pruned' if test.j in rejected else '')
        row = (f"{report.evaluator_ids[test.j]:<16}{test.estimate:>12.4f}{test.se:>10.4f}{test.p_value:>12.4g}"
               f"{threshold:>12}  {decision}")
        lines.append(row.rstrip())
    return '\n'.join(lines) + '\n'


def save_report(report, out_dir):
    json_path = _write_json(_prepare(out_dir, REPORT_FILE), report_payload(report))
    text_path = _prepare(out_dir, REPORT_TEXT_FILE)
    with open(text_path, 'w', encoding='utf-8') as f:
        f.write(report_text(report))
    logger.info(f"Wrote {json_path} and {text_path}")
    return json_path, text_path


def load_report(path):
    """
    Rebuilds an OutlierReport from report.json.

    Raises:
        ValidationError: the file is missing or malformed.
    """
    payload = _read_json(path, 'Report')
    try:
        settings = payload['settings']
        rows = payload['evaluators']
        ids = tuple(row['id'] for row in rows)
        index = {evaluator: j for j, evaluator in enumerate(ids)}

        tests = [
            TestResult(j=j, estimate=row['estimate'], se=row['se'], statistic=row['statistic'],
                       p_value=row['p_value'])
            for j, row in enumerate(rows)
        ]
        calibration = [
            CalibrationPoint(j=j, c=settings['c'], phi=settings['phi'], lam=row['lambda'], alpha=row['alpha'],
                             flag=row['flag'])
            for j, row in enumerate(rows) if row['alpha'] is not None
        ]
        fdr = payload['fdr']
        fixed = payload['fixed_alpha']
        return OutlierReport(
            evaluator_ids=ids,
            tests=tests,
            calibration=calibration,
            rejected=tuple(index[evaluator] for evaluator in payload['rejected']),
            fdr=FdrEstimate(numerator=fdr['numerator'], denominator=fdr['denominator'], q_hat=fdr['q_hat']),
            adjusted_rejected=tuple(index[evaluator] for evaluator in payload['adjusted_rejected']),
            c=settings['c'],
            kind=settings['contrast'],
            delta=settings['delta'],
            phi=settings['phi'],
            target_fdr=settings['target_fdr'],
            adjust=settings['adjust'],
            adjust_rule=settings['adjust_rule'],
            fixed_alpha=fixed['alpha'],
            fixed_alpha_rejected=tuple(index[evaluator] for evaluator in fixed['rejected']),
            fixed_alpha_power=tuple(fixed['power_range']),
            diagnostics=list(payload.get('diagnostics', [])),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"Malformed report {path}: {e}")


def load_pvalues(path, pvalue_col='p_value', id_col=None):
    """
    Reads (ids, p-values) from a CSV. Without an id column the ids are the
    1-based row numbers.

    Raises:
        ValidationError: missing file or column, or p-values that are not
            numbers in [0, 1].
    """
    if not os.path.isfile(path):
        raise ValidationError(f"Input file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, encoding='utf-8', skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ValidationError(f"Input file is empty: {path}")
    except (UnicodeDecodeError, pd.errors.ParserError) as e:
        raise ValidationError(f"Could not parse {path}: {e}")

    missing = [column for column in (pvalue_col, id_col) if column and column not in frame.columns]
    if missing:
        raise ValidationError(f"Missing column(s): {', '.join(missing)}")

    values = pd.to_numeric(frame[pvalue_col].str.strip(), errors='coerce').to_numpy(dtype=float)
    bad = ~np.isfinite(values) | (values < 0) | (values > 1)
    if bad.any():
        sample = frame.loc[bad, pvalue_col].astype(str).head(3).tolist()
        raise ValidationError(f"Malformed p-values in column '{pvalue_col}': {', '.join(sample)}")

    if id_col:
        ids = frame[id_col].astype(str).tolist()
    else:
        ids = [str(row + 1) for row in range(len(frame))]
    return ids, values


def _labels(summary):
    outliers = set(summary.config.outliers.tolist())
    return np.array(['tp' if j in outliers else 'fp' for j in range(summary.config.M)], dtype=object)


def simulation_frames(summary):
    """(fdr_curve, proportions, alpha05_proportions) data frames."""
    curve = pd.DataFrame({
        'phi': summary.phis,
        'fdr_est_mean': summary.fdr_est_mean,
        'fdr_emp_mean': summary.fdr_emp_mean,
        'fdr_alpha05': np.full(summary.phis.shape, summary.fdr_alpha05),
        'fdr_emp_adjusted_mean': summary.fdr_emp_adjusted_mean,
    })

    G, M = summary.proportions.shape
    ids = np.asarray(summary.evaluator_ids, dtype=object)
    labels = _labels(summary)
    blocks = []
    for flag, table in ((0, summary.proportions), (1, summary.adjusted_proportions)):
        blocks.append(pd.DataFrame({
            'evaluator': np.repeat(ids, G),
            'phi': np.tile(summary.phis, M),
            'tp_or_fp': np.repeat(labels, G),
            'adjusted_flag': flag,
            'proportion': table.T.reshape(-1),
        }))
    proportions = pd.concat(blocks, ignore_index=True)

    alpha05 = pd.DataFrame({
        'evaluator': ids,
        'tp_or_fp': labels,
        'proportion': summary.alpha05_proportions,
    })
    return curve, proportions, alpha05


def simulation_manifest(summary):
    config = asdict(summary.config)
    config['phi_grid'] = [float(phi) for phi in summary.config.phi_grid]
    config['outlier_spec'] = [[int(j), float(beta)] for j, beta in summary.config.outlier_spec]
    return {
        'config': config,
        'seeds': {
            'base_seed': summary.config.base_seed,
            'replicate_seeds': list(summary.seeds),
        },
        'replicates': summary.n_replicates,
        'failures': summary.failures,
        'noise_ratio': summary.noise_ratio,
    }


def save_simulation(summary, out_dir):
    curve, proportions, alpha05 = simulation_frames(summary)
    paths = [
        _prepare(out_dir, SIM_CURVE_FILE),
        _prepare(out_dir, SIM_PROPORTIONS_FILE),
        _prepare(out_dir, SIM_ALPHA05_FILE),
    ]
    for frame, path in zip((curve, proportions, alpha05), paths):
        frame.to_csv(path, index=False)
    paths.append(_write_json(_prepare(out_dir, SIM_MANIFEST_FILE), simulation_manifest(summary)))
    logger.info(f"Wrote simulation bundle to {out_dir}")
    return paths


def _save_svg(fig, path):
    with matplotlib.rc_context({'svg.hashsalt': SVG_SALT}):
        fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    return path


def plot_curve(curve, out_dir):
    """Estimated FDR against target power, with the power 0.8 and FDR 0.5 guides."""
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    ax.plot(curve.phis, curve.q_hats, marker='o', markersize=3)
    ax.axvline(REFERENCE_POWER, linestyle='--', color='grey')
    ax.axhline(REFERENCE_FDR, linestyle='--', color='grey')
    ax.set_xlabel('Power')
    ax.set_ylabel('Estimated FDR')
    ax.set_title(f"{curve.kind} contrast, c = {curve.c:g}")
    ax.grid(True, alpha=0.3)
    return _save_svg(fig, _prepare(out_dir, CURVE_PLOT_FILE))


def plot_betas(table, out_dir):
    fig, ax = plt.subplots(figsize=(7, 4), constrained_layout=True)
    positions = np.arange(1, len(table) + 1)
    ax.scatter(positions, table['centered_mean'], s=12, label='minus mean')
    ax.scatter(positions, table['centered_truncated'], s=12, marker='x', label='minus truncated mean')
    ax.axhline(0.0, color='grey', linewidth=0.8)
    ax.set_xlabel('Evaluator')
    ax.set_ylabel('Centered effect')
    ax.legend(loc='best', fontsize=8)
    return _save_svg(fig, _prepare(out_dir, BETA_PLOT_FILE))


def plot_simulation(summary, out_dir):
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    ax.plot(summary.phis, summary.fdr_emp_mean, label='empirical')
    ax.plot(summary.phis, summary.fdr_est_mean, linestyle='--', label='estimated')
    ax.axhline(summary.fdr_alpha05, linestyle=':', color='grey', label='alpha = 0.05')
    ax.set_xlabel('Power')
    ax.set_ylabel('FDR')
    ax.set_title(f"sigma = {summary.config.sigma:g}")
    ax.legend(loc='best', fontsize=8)
    return _save_svg(fig, _prepare(out_dir, SIM_PLOT_FILE))
