import json
from unittest import mock

from django.core.management.base import CommandError

from outliers.tests.mixins import PLANTED, OutputDirMixin


class DetectCommandTests(OutputDirMixin):
    def setUp(self):
        super().setUp()
        self.fit_planted()

    def report(self):
        with open(self.path('report.json')) as f:
            return json.load(f)

    def test_at_power(self):
        output = self.call('detect', power='0.8', adjust=True)
        report = self.report()

        self.assertIn(PLANTED, output)
        self.assertIn('Adjusted outliers', output)
        self.assertEqual(report['rejected'][0], PLANTED)
        self.assertEqual(report['adjusted_rejected'][0], PLANTED)
        self.assertEqual(report['settings']['phi'], 0.8)
        self.assertTrue(report['settings']['adjust'])
        self.assertEqual(len(report['evaluators']), 12)

    def test_at_target_fdr(self):
        self.call('detect', target_fdr='0.5', contrast='untruncated', c='10')
        report = self.report()

        self.assertEqual(report['settings']['target_fdr'], 0.5)
        self.assertEqual(report['settings']['contrast'], 'untruncated')
        self.assertLessEqual(report['fdr']['q_hat'], 0.5)
        self.assertIn(PLANTED, report['rejected'])

    def test_no_feasible_power(self):
        output = self.call('detect', target_fdr='0')
        self.assertIn('no feasible power', output)
        self.assertEqual(self.report()['rejected'], [])

    def test_verify(self):
        output = self.call('detect', power='0.9', adjust=True, adjust_rule='algorithm', verify=True)
        self.assertIn(PLANTED, output)
        self.assertEqual(self.report()['settings']['adjust_rule'], 'algorithm')

    @mock.patch('outliers.management.commands.detect.verify_report', return_value=['alpha drift'])
    def test_verify_mismatch(self, mock_verify):
        with self.assertRaisesMessage(CommandError, 'alpha drift') as cm:
            self.call('detect', power='0.8', verify=True)
        self.assertEqual(cm.exception.returncode, 3)
        mock_verify.assert_called_once()

    def test_needs_one_target(self):
        for options in ({}, {'power': '0.8', 'target_fdr': '0.5'}):
            with self.assertRaisesMessage(CommandError, 'Give exactly one of --power and --target-fdr.') as cm:
                self.call('detect', **options)
            self.assertEqual(cm.exception.returncode, 2)

    def test_invalid_power(self):
        with self.assertRaisesMessage(CommandError, '--power') as cm:
            self.call('detect', power='1.2')
        self.assertEqual(cm.exception.returncode, 2)
