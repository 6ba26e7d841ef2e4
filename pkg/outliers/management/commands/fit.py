import logging

from outliers.artifacts import beta_table, plot_betas, save_fit
from outliers.dataset import build_design, ingest_csv
from outliers.management.base import OutlierCommand, exit_codes
from outliers.regression import fit

logger = logging.getLogger(__name__)


class Command(OutlierCommand):
    help = 'Fits the first-stage regression and writes fit.json and beta_table.csv'

    subcommand = 'fit'

    def add_arguments(self, parser):
        self.add_data_arguments(parser)
        self.add_fit_arguments(parser)
        parser.add_argument('--delta', help='Trimming fraction for the truncated-mean column of the beta table')
        self.add_output_arguments(parser)

    def handle(self, *args, **options):
        config = self.run_config(options)
        data = config.cleaned_data

        with exit_codes():
            dataset = ingest_csv(data['input'], config.column_binding())
            result = fit(dataset, build_design(dataset), engine=data['engine'], corr=data['corr'],
                         cov_type=data['cov_type'])
            result.require_converged()
            logger.info(f"{result.engine} fit converged for {result.M} evaluators")

            fit_path, table_path = save_fit(result, data['out'], dataset, data['delta'])
            if options['svg']:
                plot_betas(beta_table(result, data['delta']), data['out'])

        self.stdout.write(f"{result.engine} fit of {result.M} evaluators on {result.n_obs} measurements")
        if result.engine == 'gee':
            self.stdout.write(f"working correlation {result.working_corr.kind}: {result.working_corr.describe()}")
        self.stdout.write(f"Wrote {fit_path} and {table_path}")
