import dataclasses

import numpy as np

from geometry.serializers import read_pose
from geometry.services import wdlt_solve
from refinement.models import RefineConfig
from refinement.services import lm_refine
from sclocalize.commands import PipelineCommand
from simulator.serializers import PoseSerializer, read_scene
from training.serializers import read_theta


class Command(PipelineCommand):
    help = 'Refine a pose by alternating inlier selection and Levenberg-Marquardt'

    def add_pipeline_arguments(self, parser):
        parser.add_argument('scene', help='Scene file')
        parser.add_argument('--pose', default=None, help='Initial pose (weighted DLT on the scene when omitted)')
        parser.add_argument('--theta', default=None, help='Weights for the initial weighted DLT')
        parser.add_argument('--threshold', type=float, default=None, help='Inlier threshold in pixels')

    def run_pipeline(self, **options):
        scene = read_scene(options['scene'])
        cfg = RefineConfig.from_mapping(self.config)
        if options['threshold'] is not None:
            cfg = dataclasses.replace(cfg, threshold_px=options['threshold'])

        if options['pose']:
            initial = read_pose(options['pose'])
        else:
            w = read_theta(options['theta']).activate() if options['theta'] else np.ones(len(scene))
            initial = wdlt_solve(scene.predicted_coords, scene.pixel_obs, w, scene.intrinsics)

        result = lm_refine(initial, scene.predicted_coords, scene.pixel_obs, scene.intrinsics, cfg)
        # Extra keys ride along with the pose; readers of pose files ignore them
        payload = dict(PoseSerializer(result.pose).data)
        payload.update({
            'iterations_used': result.iterations_used,
            'converged': result.converged,
            'inliers': [int(i) for i in result.final_inliers],
            'final_cost': result.final_cost,
        })
        self.emit_json(payload, options['out'])
