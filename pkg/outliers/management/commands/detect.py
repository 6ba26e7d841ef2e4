import logging

from django.core.management.base import CommandError

from outliers.artifacts import FIT_FILE, load_fit, load_report, report_text, save_report
from outliers.fdr import detect, detect_at_fdr, verify_report
from outliers.management.base import OutlierCommand, exit_codes
from outliers.utils import EXIT_NUMERIC

logger = logging.getLogger(__name__)


class Command(OutlierCommand):
    help = 'Flags outlying evaluators at a target power or a target FDR'

    subcommand = 'detect'

    def add_arguments(self, parser):
        parser.add_argument('--fit', help='fit.json written by the fit command (default <out>/fit.json)')
        parser.add_argument('--power', help='Target power phi')
        parser.add_argument('--target-fdr', help='Largest acceptable estimated FDR')
        self.add_contrast_arguments(parser)
        parser.add_argument('--adjust', action='store_true', help='Apply the FDR-based adjustment')
        parser.add_argument('--verify', action='store_true', help='Re-derive the written report and compare')
        self.add_output_arguments(parser, svg=False)

    def handle(self, *args, **options):
        config = self.run_config(options)
        data = config.cleaned_data

        with exit_codes():
            result = load_fit(self.artifact_path(config, 'fit', FIT_FILE))
            if data['power'] is not None:
                report = detect(result, data['contrast'], data['delta'], data['c'], data['power'],
                                adjust=data['adjust'], adjust_rule=data['adjust_rule'])
            else:
                report = detect_at_fdr(result, data['contrast'], data['delta'], data['c'], data['target_fdr'],
                                       phi_grid=data['grid'], adjust=data['adjust'],
                                       adjust_rule=data['adjust_rule'])
            json_path, _ = save_report(report, data['out'])
            logger.info(f"{len(report.rejected)} evaluators flagged, report saved to {json_path}")

            if options['verify']:
                mismatches = verify_report(load_report(json_path))
                if mismatches:
                    raise CommandError('; '.join(mismatches), returncode=EXIT_NUMERIC)

        self.stdout.write(report_text(report), ending='')
