from django.test import SimpleTestCase, override_settings

from outliers.forms import RunConfigForm

from .mixins import BINDING_OPTIONS


class RunConfigFormTests(SimpleTestCase):
    def form(self, data, subcommand=None):
        form = RunConfigForm(data, subcommand=subcommand)
        form.is_valid()
        return form

    def test_defaults(self):
        form = self.form({})
        self.assertTrue(form.is_valid(), form.errors)
        data = form.cleaned_data
        self.assertEqual(data['engine'], 'ols')
        self.assertEqual(data['corr'], 'exchangeable')
        self.assertEqual(data['contrast'], 'truncated')
        self.assertEqual(data['adjust_rule'], 'prose')
        self.assertEqual(data['c'], 5.0)
        self.assertEqual(data['delta'], 0.1)
        self.assertEqual(len(data['grid']), 86)
        self.assertEqual(data['alpha'], 0.1)
        self.assertEqual(data['pvalue_col'], 'p_value')
        self.assertEqual(data['rho'], 0.0)

    @override_settings(EVALGUARD_DEFAULT_C=10.0, EVALGUARD_OUTPUT_DIR='/tmp/evalguard-out')
    def test_settings_defaults(self):
        data = self.form({}).cleaned_data
        self.assertEqual(data['c'], 10.0)
        self.assertEqual(data['out'], '/tmp/evalguard-out')

    def test_column_binding(self):
        form = self.form(dict(BINDING_OPTIONS, input='x.csv', covariates='age, status ,'), subcommand='fit')
        self.assertTrue(form.is_valid(), form.errors)
        binding = form.column_binding()
        self.assertEqual(binding.outcome, 'threshold')
        self.assertEqual(binding.covariates, ('age', 'status'))
        self.assertEqual(binding.categorical, ('status',))
        self.assertIsNone(binding.repeat)
        self.assertIsNone(binding.split_by)

    def test_fit_requires_columns(self):
        form = self.form({'input': 'x.csv', 'outcome_col': 'y'}, subcommand='fit')
        self.assertFalse(form.is_valid())
        self.assertEqual(form.error_text(), 'Missing required option(s): --participant-col, --evaluator-col')

    def test_detect_needs_exactly_one_target(self):
        self.assertFalse(self.form({}, subcommand='detect').is_valid())
        self.assertFalse(self.form({'power': 0.8, 'target_fdr': 0.5}, subcommand='detect').is_valid())
        self.assertTrue(self.form({'power': 0.8}, subcommand='detect').is_valid())
        self.assertTrue(self.form({'target_fdr': '0.5'}, subcommand='detect').is_valid())

    def test_field_errors_name_the_flag(self):
        form = self.form({'power': '1.5', 'delta': '0.5', 'c': '-1'})
        text = form.error_text()
        self.assertIn('--power: Power must lie in (0, 1).', text)
        self.assertIn('--delta: delta must lie in [0, 0.5).', text)
        self.assertIn('--c: The alternative magnitude c must be positive.', text)

    def test_grid(self):
        self.assertEqual(self.form({'grid': '0.5:0.7:0.1'}).cleaned_data['grid'], (0.5, 0.6, 0.7))
        self.assertIn('--grid', self.form({'grid': '0.5:1.2:0.1'}).error_text())
        self.assertIn('--grid', self.form({'grid': 'fast'}).error_text())

    def test_choices(self):
        self.assertFalse(self.form({'engine': 'glm'}).is_valid())
        self.assertFalse(self.form({'adjust_rule': 'ceiling'}).is_valid())
        self.assertFalse(self.form({'rho': '1'}).is_valid())
        self.assertFalse(self.form({'alpha': '0'}).is_valid())
        self.assertFalse(self.form({'evaluators': '1'}).is_valid())
