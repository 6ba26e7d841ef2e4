from django import forms
from django.conf import settings

from .dataset import ColumnBinding
from .utils import ADJUST_RULES, CONTRASTS, CORRELATIONS, ENGINES, parse_grid

COV_TYPES = {
    'model': 'Model-based covariance',
    'hc0': 'Heteroskedasticity-consistent sandwich',
}


def _choices(options):
    return list(options.items())


class ColumnListField(forms.CharField):
    def to_python(self, value):
        # Normalize "a, b,c" to ['a', 'b', 'c']
        if not value:
            return []
        if isinstance(value, (list, tuple)):
            return [str(column).strip() for column in value if str(column).strip()]

        return [column.strip() for column in str(value).split(',') if column.strip()]


class GridField(forms.CharField):
    def to_python(self, value):
        # Normalize "start:stop:step" to the tuple of grid powers
        if not value:
            return None

        try:
            grid = parse_grid(str(value).strip())
        except ValueError as e:
            raise forms.ValidationError(str(e), code='invalid')

        if any(not 0 < phi < 1 for phi in grid):
            raise forms.ValidationError('Grid powers must lie in (0, 1).', code='invalid')

        return tuple(grid)


class RunConfigForm(forms.Form):
    """
    Options shared by the management commands. Missing values fall back to
    the EVALGUARD_* settings.
    """

    input = forms.CharField(required=False)
    outcome_col = forms.CharField(required=False)
    participant_col = forms.CharField(required=False)
    evaluator_col = forms.CharField(required=False)
    covariates = ColumnListField(required=False)
    categorical = ColumnListField(required=False)
    measurement_covariates = ColumnListField(required=False)
    repeat_col = forms.CharField(required=False)
    split_by = forms.CharField(required=False)

    engine = forms.ChoiceField(choices=_choices(ENGINES), required=False)
    corr = forms.ChoiceField(choices=_choices(CORRELATIONS), required=False)
    cov_type = forms.ChoiceField(choices=_choices(COV_TYPES), required=False)

    c = forms.FloatField(required=False)
    power = forms.FloatField(required=False)
    target_fdr = forms.FloatField(required=False, min_value=0)
    contrast = forms.ChoiceField(choices=_choices(CONTRASTS), required=False)
    delta = forms.FloatField(required=False)
    adjust = forms.BooleanField(required=False)
    adjust_rule = forms.ChoiceField(choices=_choices(ADJUST_RULES), required=False)
    grid = GridField(required=False)

    sigma = forms.FloatField(required=False, min_value=0)
    replicates = forms.IntegerField(required=False, min_value=1)
    rho = forms.FloatField(required=False)
    paired = forms.BooleanField(required=False)
    evaluators = forms.IntegerField(required=False, min_value=2)
    per_evaluator = forms.IntegerField(required=False, min_value=1)
    seed = forms.IntegerField(required=False, min_value=0)

    alpha = forms.FloatField(required=False)
    pvalue_col = forms.CharField(required=False)
    id_col = forms.CharField(required=False)

    fit = forms.CharField(required=False)
    report = forms.CharField(required=False)
    out = forms.CharField(required=False)

    def __init__(self, *args, subcommand=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.subcommand = subcommand

    def clean_engine(self):
        return self.cleaned_data['engine'] or 'ols'

    def clean_corr(self):
        return self.cleaned_data['corr'] or 'exchangeable'

    def clean_cov_type(self):
        return self.cleaned_data['cov_type'] or 'model'

    def clean_contrast(self):
        return self.cleaned_data['contrast'] or 'truncated'

    def clean_adjust_rule(self):
        return self.cleaned_data['adjust_rule'] or 'prose'

    def clean_c(self):
        c = self.cleaned_data['c']
        if c is None:
            c = settings.EVALGUARD_DEFAULT_C
        if c <= 0:
            raise forms.ValidationError('The alternative magnitude c must be positive.', code='invalid')
        return c

    def clean_delta(self):
        delta = self.cleaned_data['delta']
        if delta is None:
            delta = settings.EVALGUARD_DEFAULT_DELTA
        if not 0 <= delta < 0.5:
            raise forms.ValidationError('delta must lie in [0, 0.5).', code='invalid')
        return delta

    def clean_power(self):
        power = self.cleaned_data['power']
        if power is not None and not 0 < power < 1:
            raise forms.ValidationError('Power must lie in (0, 1).', code='invalid')
        return power

    def clean_rho(self):
        rho = self.cleaned_data['rho']
        if rho is None:
            return 0.0
        if not -1 < rho < 1:
            raise forms.ValidationError('rho must lie in (-1, 1).', code='invalid')
        return rho

    def clean_grid(self):
        grid = self.cleaned_data['grid']
        if grid is None:
            grid = tuple(parse_grid(settings.EVALGUARD_DEFAULT_GRID))
        return grid

    def clean_alpha(self):
        alpha = self.cleaned_data['alpha']
        if alpha is None:
            alpha = settings.EVALGUARD_BH_ALPHA
        if not 0 < alpha < 1:
            raise forms.ValidationError('alpha must lie in (0, 1).', code='invalid')
        return alpha

    def clean_pvalue_col(self):
        return self.cleaned_data['pvalue_col'] or 'p_value'

    def clean_out(self):
        return self.cleaned_data['out'] or str(settings.EVALGUARD_OUTPUT_DIR)

    def clean(self):
        cleaned_data = super().clean()

        if self.subcommand == 'detect':
            if (cleaned_data.get('power') is None) == (cleaned_data.get('target_fdr') is None):
                raise forms.ValidationError('Give exactly one of --power and --target-fdr.', code='invalid')

        if self.subcommand == 'fit':
            required = ['input', 'outcome_col', 'participant_col', 'evaluator_col']
            missing = [name for name in required if not cleaned_data.get(name)]
            if missing:
                flags = ', '.join('--' + name.replace('_', '-') for name in missing)
                raise forms.ValidationError(f"Missing required option(s): {flags}", code='required')

        return cleaned_data

    def column_binding(self):
        data = self.cleaned_data
        return ColumnBinding(
            outcome=data['outcome_col'],
            participant=data['participant_col'],
            evaluator=data['evaluator_col'],
            covariates=tuple(data['covariates']),
            categorical=tuple(data['categorical']),
            repeat=data['repeat_col'] or None,
            measurement_covariates=tuple(data['measurement_covariates']),
            split_by=data['split_by'] or None,
        )

    def error_text(self):
        messages = []
        for field, errors in self.errors.items():
            prefix = '' if field == '__all__' else f"--{field.replace('_', '-')}: "
            messages.extend(prefix + str(error) for error in errors)
        return '; '.join(messages)
