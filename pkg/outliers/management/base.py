import logging
import os
from contextlib import contextmanager

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from ..exceptions import NumericalError, SimulationError
from ..forms import RunConfigForm
from ..utils import ADJUST_RULES, CONTRASTS, CORRELATIONS, ENGINES, EXIT_INPUT, EXIT_NUMERIC, EXIT_SIMULATION

logger = logging.getLogger(__name__)


def _messages(error):
    return '; '.join(error.messages)


@contextmanager
def exit_codes():
    """Turns pipeline exceptions into CommandError with the matching exit code."""
    try:
        yield
    except CommandError:
        raise
    except ValidationError as e:
        raise CommandError(_messages(e), returncode=EXIT_INPUT)
    except NumericalError as e:
        raise CommandError(str(e), returncode=EXIT_NUMERIC)
    except SimulationError as e:
        raise CommandError(str(e), returncode=EXIT_SIMULATION)
    except OSError as e:
        logger.exception('Could not read or write an artifact.')
        raise CommandError(str(e), returncode=EXIT_INPUT)


class OutlierCommand(BaseCommand):
    """Shared option groups and RunConfig validation of the pipeline commands."""

    subcommand = None

    def add_data_arguments(self, parser):
        parser.add_argument('--input', help='Long-format CSV with one measurement per row')
        parser.add_argument('--outcome-col', help='Outcome column')
        parser.add_argument('--participant-col', help='Participant id column')
        parser.add_argument('--evaluator-col', help='Evaluator id column')
        parser.add_argument('--covariates', help='Comma-separated participant covariate columns')
        parser.add_argument('--categorical', help='Comma-separated covariates to expand into dummies')
        parser.add_argument('--measurement-covariates', help='Comma-separated measurement covariate columns')
        parser.add_argument('--repeat-col', help='Repeat index column (1-based)')
        parser.add_argument('--split-by', help='Effect modifier splitting each evaluator into one per level')

    def add_fit_arguments(self, parser):
        parser.add_argument('--engine', choices=list(ENGINES), help='First-stage estimator (default ols)')
        parser.add_argument('--corr', choices=list(CORRELATIONS),
                            help='GEE working correlation (default exchangeable)')
        parser.add_argument('--cov-type', choices=['model', 'hc0'], help='OLS covariance (default model)')

    def add_contrast_arguments(self, parser):
        parser.add_argument('--c', help='Alternative magnitude |L\'beta| = c')
        parser.add_argument('--contrast', choices=list(CONTRASTS), help='Contrast kind (default truncated)')
        parser.add_argument('--delta', help='Trimming fraction of the truncated mean')
        parser.add_argument('--grid', help='Power grid "start:stop:step"')
        parser.add_argument('--adjust-rule', choices=list(ADJUST_RULES),
                            help='How many rejections the FDR-based adjustment removes')

    def add_output_arguments(self, parser, svg=True):
        parser.add_argument('--out', help='Output directory (default EVALGUARD_OUTPUT_DIR)')
        if svg:
            parser.add_argument('--svg', action='store_true', help='Also write an SVG plot')

    def run_config(self, options):
        """Validates the command options; raises CommandError(returncode=2) on failure."""
        fields = RunConfigForm.base_fields
        data = {name: value for name, value in options.items() if name in fields and value is not None}
        form = RunConfigForm(data, subcommand=self.subcommand)
        if not form.is_valid():
            raise CommandError(form.error_text(), returncode=EXIT_INPUT)
        return form

    def artifact_path(self, config, name, default_file):
        return config.cleaned_data[name] or os.path.join(config.cleaned_data['out'], default_file)
