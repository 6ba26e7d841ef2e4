import json
import os

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError

from outliers.artifacts import (
    beta_table, curve_frame, load_fit, load_pvalues, load_report, plot_betas, plot_curve, plot_simulation,
    report_text, save_curve, save_fit, save_report, save_simulation, simulation_frames,
)
from outliers.dataset import ColumnBinding, build_design, ingest_csv
from outliers.fdr import decision_curve, detect, detect_at_fdr, verify_report
from outliers.regression import fit
from outliers.simulation import SimConfig, run_study

from .mixins import AUDIOLOGY, PLANTED, OutputDirMixin

PAIRED = ColumnBinding(outcome='threshold', participant='participant_id', evaluator='audiologist',
                       covariates=('age', 'status'), categorical=('status', 'ear'),
                       measurement_covariates=('ear',), repeat='visit')


class FitArtifactTests(OutputDirMixin):
    def setUp(self):
        super().setUp()
        self.dataset = ingest_csv(self.planted_csv, AUDIOLOGY)
        self.fit = fit(self.dataset, build_design(self.dataset))

    def test_round_trip(self):
        fit_path, table_path = save_fit(self.fit, self.out_dir, self.dataset)
        loaded = load_fit(fit_path)

        np.testing.assert_array_equal(loaded.beta_hat, self.fit.beta_hat)
        np.testing.assert_array_equal(loaded.full_cov, self.fit.full_cov)
        np.testing.assert_array_equal(loaded.beta_cov, self.fit.beta_cov)
        self.assertEqual(loaded.evaluator_ids, self.fit.evaluator_ids)
        self.assertEqual(loaded.column_names, self.fit.column_names)
        self.assertTrue(loaded.converged)

        with open(fit_path) as f:
            payload = json.load(f)
        self.assertEqual(payload['data']['participants'], 360)
        self.assertEqual(payload['engine'], 'ols')

        table = pd.read_csv(table_path, dtype={'evaluator': str})
        self.assertEqual(list(table.columns), ['evaluator', 'beta_hat', 'se', 'centered_mean', 'centered_truncated'])
        self.assertEqual(table['evaluator'].tolist()[3], PLANTED)

    def test_gee_round_trip(self):
        dataset = ingest_csv(self.paired_csv, PAIRED)
        design = build_design(dataset)
        for corr in ('exchangeable', 'unstructured'):
            result = fit(dataset, design, engine='gee', corr=corr)
            loaded = load_fit(save_fit(result, self.path(corr), dataset)[0])

            self.assertEqual(loaded.working_corr.kind, corr)
            np.testing.assert_array_equal(np.asarray(loaded.working_corr.params),
                                          np.asarray(result.working_corr.params))
            np.testing.assert_array_equal(loaded.naive_cov, result.naive_cov)
            np.testing.assert_array_equal(loaded.eta_hat, result.eta_hat)

    def test_beta_table(self):
        table = beta_table(self.fit)
        self.assertAlmostEqual(table['centered_mean'].sum(), 0.0, delta=1e-9)
        self.assertEqual(table['centered_truncated'].idxmax(), 3)
        self.assertTrue((table['se'] > 0).all())

    def test_missing_fit(self):
        with self.assertRaisesMessage(ValidationError, 'Fit artifact not found'):
            load_fit(self.path('nowhere.json'))

    def test_malformed_fit(self):
        broken = self.path('broken.json')
        with open(broken, 'w') as f:
            f.write('{"beta_hat": [1, 2')
        with self.assertRaisesMessage(ValidationError, 'Could not parse'):
            load_fit(broken)

        incomplete = self.path('incomplete.json')
        with open(incomplete, 'w') as f:
            json.dump({'beta_hat': [1.0, 2.0]}, f)
        with self.assertRaisesMessage(ValidationError, 'Malformed fit artifact'):
            load_fit(incomplete)


class CurveArtifactTests(OutputDirMixin):
    def setUp(self):
        super().setUp()
        dataset = ingest_csv(self.planted_csv, AUDIOLOGY)
        self.curve = decision_curve(fit(dataset, build_design(dataset)), phi_grid=(0.5, 0.6, 0.7))

    def test_frame(self):
        frame = curve_frame(self.curve)
        self.assertEqual(list(frame.columns[:3]), ['phi', 'q_hat', 'n_rejected'])
        self.assertEqual(list(frame.columns[3:]), [f"alpha_{j}" for j in range(1, 13)])
        self.assertEqual(frame.shape, (3, 15))

        saved = pd.read_csv(save_curve(self.curve, self.out_dir), float_precision='round_trip')
        np.testing.assert_array_equal(saved['q_hat'].to_numpy(), self.curve.q_hats)
        np.testing.assert_array_equal(saved.to_numpy(), frame.to_numpy())

    def test_svg_is_reproducible(self):
        first = plot_curve(self.curve, self.path('first'))
        second = plot_curve(self.curve, self.path('second'))
        with open(first, 'rb') as a, open(second, 'rb') as b:
            content = a.read()
            self.assertEqual(content, b.read())
        self.assertIn(b'<svg', content)


class ReportArtifactTests(OutputDirMixin):
    def setUp(self):
        super().setUp()
        dataset = ingest_csv(self.planted_csv, AUDIOLOGY)
        self.fit = fit(dataset, build_design(dataset))

    def test_round_trip_verifies(self):
        report = detect(self.fit, phi=0.8, adjust=True)
        json_path, text_path = save_report(report, self.out_dir)
        loaded = load_report(json_path)

        self.assertEqual(loaded.rejected, report.rejected)
        self.assertEqual(loaded.adjusted_rejected, report.adjusted_rejected)
        self.assertEqual(loaded.q_hat, report.q_hat)
        self.assertEqual(loaded.evaluator_ids, report.evaluator_ids)
        self.assertEqual(verify_report(loaded), [])

        with open(text_path) as f:
            self.assertEqual(f.read(), report_text(report))

    def test_tampered_report(self):
        json_path, _ = save_report(detect(self.fit, phi=0.8), self.out_dir)
        with open(json_path) as f:
            payload = json.load(f)
        payload['rejected'] = []
        payload['adjusted_rejected'] = []
        with open(json_path, 'w') as f:
            json.dump(payload, f)

        with self.assertLogs('outliers.fdr', 'WARNING'):
            self.assertTrue(verify_report(load_report(json_path)))

    def test_text(self):
        text = report_text(detect(self.fit, phi=0.8))
        self.assertIn('Power', text)
        self.assertIn('Adjusted outliers', text)
        self.assertIn('(alpha=0.05)', text)
        row = next(line for line in text.splitlines() if line.startswith(PLANTED))
        self.assertTrue(row.endswith('outlier'))

    def test_no_feasible_round_trip(self):
        with self.assertLogs('outliers.fdr', 'WARNING'):
            report = detect_at_fdr(self.fit, target_q=0.0)
        loaded = load_report(save_report(report, self.out_dir)[0])
        self.assertIsNone(loaded.phi)
        self.assertEqual(loaded.calibration, [])
        self.assertEqual(verify_report(loaded), [])
        self.assertIn('no feasible power', report_text(report))

    def test_unknown_evaluator_in_report(self):
        json_path, _ = save_report(detect(self.fit, phi=0.8), self.out_dir)
        with open(json_path) as f:
            payload = json.load(f)
        payload['rejected'] = ['Z99']
        with open(json_path, 'w') as f:
            json.dump(payload, f)
        with self.assertRaisesMessage(ValidationError, 'Malformed report'):
            load_report(json_path)


class PvalueFileTests(OutputDirMixin):
    def test_with_ids(self):
        path = self.write_csv('p.csv', pd.DataFrame({'name': ['x', 'y'], 'pv': ['0.01', ' 0.5']}))
        ids, values = load_pvalues(path, 'pv', 'name')
        self.assertEqual(ids, ['x', 'y'])
        np.testing.assert_array_equal(values, [0.01, 0.5])

    def test_row_numbers(self):
        path = self.write_csv('p.csv', pd.DataFrame({'p_value': [0.2, 0.3, 0.4]}))
        self.assertEqual(load_pvalues(path)[0], ['1', '2', '3'])

    def test_malformed(self):
        path = self.write_csv('p.csv', pd.DataFrame({'p_value': ['0.2', 'abc', '1.5']}))
        with self.assertRaisesMessage(ValidationError, 'Malformed p-values'):
            load_pvalues(path)

    def test_missing(self):
        path = self.write_csv('p.csv', pd.DataFrame({'p': [0.2]}))
        with self.assertRaisesMessage(ValidationError, 'Missing column(s): p_value'):
            load_pvalues(path)
        with self.assertRaisesMessage(ValidationError, 'Input file not found'):
            load_pvalues(self.path('none.csv'))


class SimulationArtifactTests(OutputDirMixin):
    def setUp(self):
        super().setUp()
        self.summary = run_study(SimConfig(M=20, n=20, n_replicates=3, phi_grid=(0.5, 0.8)))

    def test_frames(self):
        curve, proportions, alpha05 = simulation_frames(self.summary)
        self.assertEqual(list(curve.columns),
                         ['phi', 'fdr_est_mean', 'fdr_emp_mean', 'fdr_alpha05', 'fdr_emp_adjusted_mean'])
        self.assertEqual(len(proportions), 2 * 2 * 20)
        self.assertEqual(set(proportions['adjusted_flag']), {0, 1})
        self.assertEqual(alpha05['tp_or_fp'].tolist().count('tp'), 8)

        first = proportions[(proportions['evaluator'] == '001') & (proportions['adjusted_flag'] == 0)]
        np.testing.assert_array_equal(first['proportion'].to_numpy(), self.summary.proportions[:, 0])

    def test_bundle(self):
        paths = save_simulation(self.summary, self.out_dir)
        self.assertEqual([os.path.basename(path) for path in paths],
                         ['fdr_curve.csv', 'proportions.csv', 'alpha05_proportions.csv', 'manifest.json'])
        with open(paths[-1]) as f:
            manifest = json.load(f)
        self.assertEqual(manifest['seeds']['replicate_seeds'], [0, 1, 2])
        self.assertEqual(manifest['failures'], 0)
        self.assertEqual(manifest['config']['M'], 20)
        self.assertNotIn('threads', manifest)

    def test_plots(self):
        table = beta_table(load_fit(self._fit_path()))
        self.assertTrue(os.path.isfile(plot_betas(table, self.out_dir)))
        self.assertTrue(os.path.isfile(plot_simulation(self.summary, self.out_dir)))

    def _fit_path(self):
        dataset = ingest_csv(self.planted_csv, AUDIOLOGY)
        return save_fit(fit(dataset, build_design(dataset)), self.out_dir, dataset)[0]
