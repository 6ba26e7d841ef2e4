import logging

from django.core.management.base import CommandError

from outliers.artifacts import REPORT_FILE, load_report
from outliers.fdr import verify_report
from outliers.management.base import OutlierCommand, exit_codes
from outliers.utils import EXIT_NUMERIC

logger = logging.getLogger(__name__)


class Command(OutlierCommand):
    help = 'Re-derives the decision stored in report.json and compares it with the stored one'

    subcommand = 'verify'

    def add_arguments(self, parser):
        parser.add_argument('--report', help='report.json written by detect (default <out>/report.json)')
        self.add_output_arguments(parser, svg=False)

    def handle(self, *args, **options):
        config = self.run_config(options)
        path = self.artifact_path(config, 'report', REPORT_FILE)

        with exit_codes():
            mismatches = verify_report(load_report(path))

        logger.info(f"Verified {path} with {len(mismatches)} mismatches")
        if mismatches:
            raise CommandError('; '.join(mismatches), returncode=EXIT_NUMERIC)
        self.stdout.write(f"{path}: consistent")
