from django.core.management.base import CommandError

from evaluation.serializers import EvalSummarySerializer, points_csv
from evaluation.services import evaluate, filter_confident_points
from geometry.serializers import read_poses
from sclocalize.commands import PipelineCommand
from sclocalize.documents import write_text
from simulator.serializers import read_scenes
from training.serializers import read_thetas


class Command(PipelineCommand):
    help = 'Compare estimated poses with ground truth: median errors, recall and weight interpretability'

    def add_pipeline_arguments(self, parser):
        parser.add_argument('--poses', required=True, help='Pose file (single pose or {"poses": [...]})')
        parser.add_argument('--gt', nargs='+', required=True, help='Ground-truth scene files or directories')
        parser.add_argument('--theta', nargs='+', default=None, help='Weight parameters, shared or one per frame')
        parser.add_argument('--t-thresh', type=float, default=None, help='Translation threshold (m)')
        parser.add_argument('--r-thresh', type=float, default=None, help='Rotation threshold (deg)')
        parser.add_argument('--points-out', default=None, help='Write the confident scene points as CSV')
        parser.add_argument('--workers', type=int, default=1)

    def run_pipeline(self, **options):
        poses = read_poses(options['poses'])
        scenes = read_scenes(options['gt'])
        thetas = read_thetas(options['theta'], len(scenes)) if options['theta'] else None
        if options['points_out'] and thetas is None:
            raise CommandError('--points-out needs --theta')

        threshold = float(self.config['eval.confidence_threshold'])
        summary = evaluate(
            poses,
            scenes,
            thetas=thetas,
            t_thresh=options['t_thresh'] if options['t_thresh'] is not None else float(self.config['eval.t_thresh_m']),
            r_thresh=options['r_thresh'] if options['r_thresh'] is not None else float(self.config['eval.r_thresh_deg']),
            confidence_threshold=threshold,
            workers=options['workers'],
        )

        if options['points_out']:
            rows = []
            for frame, (scene, theta) in enumerate(zip(scenes, thetas)):
                w = theta.activate()
                coords, indices = filter_confident_points(scene.predicted_coords, w, threshold)
                rows.extend((frame, int(i), xyz, w[i]) for i, xyz in zip(indices, coords))
            write_text(options['points_out'], points_csv(rows))
        self.emit_json(EvalSummarySerializer(summary).data, options['out'])
