import logging

from outliers.artifacts import load_pvalues
from outliers.fdr import bh_procedure
from outliers.management.base import OutlierCommand, exit_codes

logger = logging.getLogger(__name__)


class Command(OutlierCommand):
    help = 'Benjamini-Hochberg step-up procedure on a CSV of p-values'

    subcommand = 'bh'

    def add_arguments(self, parser):
        parser.add_argument('--input', help='CSV with one p-value per row')
        parser.add_argument('--pvalue-col', help='p-value column (default p_value)')
        parser.add_argument('--id-col', help='Id column; row numbers are used without one')
        parser.add_argument('--alpha', help='FDR level (default EVALGUARD_BH_ALPHA)')

    def handle(self, *args, **options):
        config = self.run_config(options)
        data = config.cleaned_data

        with exit_codes():
            ids, pvalues = load_pvalues(data['input'], data['pvalue_col'], data['id_col'] or None)
            rejected = sorted(bh_procedure(pvalues, data['alpha']), key=lambda j: (pvalues[j], j))

        logger.info(f"{len(rejected)} of {len(ids)} hypotheses rejected at alpha {data['alpha']}")
        for j in rejected:
            self.stdout.write(ids[j])
