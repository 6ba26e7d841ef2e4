import logging

from outliers.artifacts import FIT_FILE, load_fit, plot_curve, save_curve
from outliers.fdr import decision_curve
from outliers.management.base import OutlierCommand, exit_codes

logger = logging.getLogger(__name__)


class Command(OutlierCommand):
    help = 'Writes the estimated FDR against target power for a saved fit'

    subcommand = 'curve'

    def add_arguments(self, parser):
        parser.add_argument('--fit', help='fit.json written by the fit command (default <out>/fit.json)')
        self.add_contrast_arguments(parser)
        self.add_output_arguments(parser)

    def handle(self, *args, **options):
        config = self.run_config(options)
        data = config.cleaned_data

        with exit_codes():
            result = load_fit(self.artifact_path(config, 'fit', FIT_FILE))
            curve = decision_curve(result, data['contrast'], data['delta'], data['c'], data['grid'])
            path = save_curve(curve, data['out'])
            logger.info(f"Decision curve over {len(curve.points)} powers saved to {path}")
            if options['svg']:
                plot_curve(curve, data['out'])

        self.stdout.write(f"{len(curve.points)} grid points for {result.M} evaluators, written to {path}")
