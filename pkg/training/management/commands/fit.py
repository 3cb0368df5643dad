import logging

from django.core.management.base import CommandError

from losses.models import LossConfig
from sclocalize.commands import PipelineCommand
from simulator.serializers import read_scene
from training.models import (
    COORD_GRADIENT_FULL,
    COORD_GRADIENT_RESIDUAL,
    MODE_JOINT,
    MODE_REGRESSION,
    SCHEDULE_ALTERNATE,
    SCHEDULE_JOINT,
    OptimizerSettings,
)
from training.serializers import FitReportSerializer, read_theta, write_curve, write_theta
from training.services import e2e_refine, fit_weights, init_scene_coordinates

logger = logging.getLogger(__name__)

MODE_CHOICES = {'joint': MODE_JOINT, 'regression': MODE_REGRESSION}


class Command(PipelineCommand):
    help = 'Fit per-correspondence weights on a scene, optionally followed by end-to-end refinement'

    def add_pipeline_arguments(self, parser):
        parser.add_argument('scene', help='Scene file')
        parser.add_argument('--mode', choices=sorted(MODE_CHOICES), default='joint',
                            help='joint = classification + regression, regression = regression only')
        parser.add_argument('--iters', type=int, default=None, help='Weight initialization iterations')
        parser.add_argument('--init-iters', type=int, default=0,
                            help='Scene coordinate initialization iterations before fitting (0 skips the stage)')
        parser.add_argument('--e2e-iters', type=int, default=0,
                            help='End-to-end iterations after fitting (0 skips the stage)')
        parser.add_argument('--schedule', choices=[SCHEDULE_JOINT, SCHEDULE_ALTERNATE], default=None)
        parser.add_argument('--coord-gradient', choices=[COORD_GRADIENT_RESIDUAL, COORD_GRADIENT_FULL], default=None)
        parser.add_argument('--theta-in', default=None, help='Start from these weight parameters')
        parser.add_argument('--theta-out', default=None, help='Write the fitted weight parameters here')
        parser.add_argument('--curve-out', default=None, help='Write the per-iteration curve as CSV')

    def run_pipeline(self, **options):
        scene = read_scene(options['scene'])
        cfg = LossConfig.from_mapping(self.config)
        mode = MODE_CHOICES[options['mode']]
        seed = 0 if options['seed'] is None else options['seed']
        iters = options['iters'] if options['iters'] is not None else int(self.config['fit.iterations'])
        if iters < 0 or options['e2e_iters'] < 0 or options['init_iters'] < 0:
            raise CommandError('Iteration counts must not be negative')
        if iters == 0 and options['e2e_iters'] == 0:
            raise CommandError('Nothing to do: --iters and --e2e-iters are both zero')

        theta = read_theta(options['theta_in']) if options['theta_in'] else None
        coords = None
        if options['init_iters'] > 0:
            coords = init_scene_coordinates(
                scene, cfg, OptimizerSettings.from_mapping(self.config, 'fit'), options['init_iters']
            ).coords

        report = None
        if iters > 0:
            report = fit_weights(
                scene, cfg, OptimizerSettings.from_mapping(self.config, 'fit'),
                mode=mode, iters=iters, seed=seed, theta=theta, coords=coords,
                theta_init=float(self.config['fit.theta_init']),
            )
            theta = report.theta
            logger.info(f'Weight initialization: loss {report.loss[0]:.4e} -> {report.loss[-1]:.4e}')

        if options['e2e_iters'] > 0:
            if theta is None:
                raise CommandError('End-to-end refinement needs fitted weights (--iters > 0 or --theta-in)')
            report = e2e_refine(
                scene, cfg, OptimizerSettings.from_mapping(self.config, 'e2e'),
                iters=options['e2e_iters'], seed=seed, theta=theta, coords=coords,
                schedule=options['schedule'] or self.config['fit.schedule'],
                coord_gradient=options['coord_gradient'] or self.config['fit.coord_gradient'],
                mode=mode,
            )
            logger.info(f'End-to-end refinement: loss {report.loss[0]:.4e} -> {report.loss[-1]:.4e}')

        if options['theta_out']:
            write_theta(report.theta, options['theta_out'])
        if options['curve_out']:
            write_curve(report, options['curve_out'])
        self.emit_json(FitReportSerializer(report).data, options['out'])
