import pandas as pd
from django.core.management.base import CommandError

from outliers.tests.mixins import OutputDirMixin


class BenjaminiHochbergCommandTests(OutputDirMixin):
    def setUp(self):
        super().setUp()
        self.pvalues = self.write_csv('pvalues.csv', pd.DataFrame({
            'evaluator': ['a', 'b', 'c'],
            'p_value': [0.02, 0.001, 0.8],
        }))

    def test_rejections_by_p_value(self):
        output = self.call('bh', input=self.pvalues, id_col='evaluator', alpha='0.1')
        self.assertEqual(output.splitlines(), ['b', 'a'])

    def test_row_numbers(self):
        output = self.call('bh', input=self.pvalues, alpha='0.01')
        self.assertEqual(output.splitlines(), ['2'])

    def test_nothing_rejected(self):
        self.assertEqual(self.call('bh', input=self.pvalues, alpha='0.0001'), '')

    def test_malformed(self):
        path = self.write_csv('bad.csv', pd.DataFrame({'p_value': ['0.1', 'n/a']}))
        with self.assertRaisesMessage(CommandError, 'Malformed p-values') as cm:
            self.call('bh', input=path)
        self.assertEqual(cm.exception.returncode, 2)

    def test_invalid_alpha(self):
        with self.assertRaisesMessage(CommandError, '--alpha') as cm:
            self.call('bh', input=self.pvalues, alpha='2')
        self.assertEqual(cm.exception.returncode, 2)
