from concurrent.futures import ThreadPoolExecutor

import numpy as np
from django.core.management.base import CommandError

from geometry.serializers import PoseListSerializer
from geometry.services import ransac_dlt, wdlt_solve
from sclocalize.commands import PipelineCommand
from simulator.serializers import PoseSerializer, read_scenes
from training.serializers import read_thetas


class Command(PipelineCommand):
    help = 'Estimate camera poses from scene files with the weighted DLT (or the RANSAC baseline)'

    def add_pipeline_arguments(self, parser):
        parser.add_argument('scenes', nargs='+', help='Scene files or directories of scene files')
        parser.add_argument(
            '--theta',
            nargs='+',
            default=None,
            help='Weight parameter file, shared or one per scene (uniform weights when omitted)',
        )
        parser.add_argument('--ransac', action='store_true', help='Use the unweighted RANSAC baseline')
        parser.add_argument('--workers', type=int, default=1, help='Scenes solved in parallel')

    def run_pipeline(self, **options):
        scenes = read_scenes(options['scenes'])
        if not scenes:
            raise CommandError('No scene files found')
        if options['ransac'] and options['seed'] is None:
            raise CommandError('--ransac is randomized and needs --seed')
        if options['ransac'] and options['theta']:
            raise CommandError('--ransac ignores weights; drop --theta')

        if options['ransac']:
            iterations = int(self.config['ransac.iterations'])
            threshold = float(self.config['ransac.threshold_px'])
            seed = options['seed']

            def solve(scene, _):
                return ransac_dlt(
                    scene.predicted_coords, scene.pixel_obs, scene.intrinsics, iterations, threshold, seed
                )
            weights = [None] * len(scenes)
        else:
            if options['theta']:
                weights = [theta.activate() for theta in read_thetas(options['theta'], len(scenes))]
            else:
                weights = [np.ones(len(scene)) for scene in scenes]

            def solve(scene, w):
                return wdlt_solve(scene.predicted_coords, scene.pixel_obs, w, scene.intrinsics)

        with ThreadPoolExecutor(max_workers=max(1, options['workers'])) as pool:
            poses = list(pool.map(solve, scenes, weights))

        if len(poses) == 1:
            self.emit_json(PoseSerializer(poses[0]).data, options['out'])
        else:
            self.emit_json(PoseListSerializer(poses).data, options['out'])
