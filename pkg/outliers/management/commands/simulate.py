import logging

from outliers.artifacts import plot_simulation, save_simulation
from outliers.management.base import OutlierCommand, exit_codes
from outliers.simulation import SimConfig, run_study

logger = logging.getLogger(__name__)


class Command(OutlierCommand):
    help = 'Runs the Monte Carlo study and writes the FDR curve and rejection proportion bundle'

    subcommand = 'simulate'

    def add_arguments(self, parser):
        parser.add_argument('--sigma', help='Residual standard deviation (default 8)')
        parser.add_argument('--replicates', help='Number of replicates (default 300)')
        parser.add_argument('--seed', help='Base seed; replicate r uses seed + r (default 0)')
        parser.add_argument('--evaluators', help='Number of evaluators (default 100)')
        parser.add_argument('--per-evaluator', help='Participants per evaluator (default 40)')
        parser.add_argument('--paired', action='store_true',
                            help='Two correlated measurements per participant, fitted by GEE')
        parser.add_argument('--rho', help='Within-participant residual correlation of --paired data')
        parser.add_argument('--corr', choices=['independent', 'exchangeable', 'unstructured'],
                            help='GEE working correlation of --paired runs (default exchangeable)')
        self.add_contrast_arguments(parser)
        self.add_output_arguments(parser)

    def handle(self, *args, **options):
        config = self.run_config(options)
        data = config.cleaned_data

        overrides = {
            'sigma': data['sigma'],
            'n_replicates': data['replicates'],
            'base_seed': data['seed'],
            'M': data['evaluators'],
            'n': data['per_evaluator'],
        }
        with exit_codes():
            sim_config = SimConfig(
                c=data['c'],
                kind=data['contrast'],
                delta=data['delta'],
                phi_grid=data['grid'],
                adjust_rule=data['adjust_rule'],
                paired=data['paired'],
                rho=data['rho'],
                corr=data['corr'],
                **{name: value for name, value in overrides.items() if value is not None},
            )
            summary = run_study(sim_config)
            logger.info(f"Study finished with {summary.n_succeeded} of {summary.n_replicates} replicates")
            save_simulation(summary, data['out'])
            if options['svg']:
                plot_simulation(summary, data['out'])

        self.stdout.write(
            f"{summary.n_succeeded} of {summary.n_replicates} replicates, noise ratio {summary.noise_ratio:.3f}, "
            f"written to {data['out']}"
        )
