import csv
import dataclasses
import io
import logging
from pathlib import Path

import numpy as np
from django.core.management.base import CommandError

from adaptation.models import AdaptConfig
from adaptation.services import adapt_weights, evaluate_frames
from sclocalize.commands import PipelineCommand
from sclocalize.documents import write_text
from simulator.serializers import read_pair, read_scenes, scene_paths
from training.serializers import WeightParamsSerializer, read_theta

logger = logging.getLogger(__name__)


def loss_csv(losses) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['iter', 'L_ph'])
    for index, value in enumerate(losses):
        writer.writerow([index, repr(float(value))])
    return buffer.getvalue()


class Command(PipelineCommand):
    help = 'Fine-tune weight parameters on image pairs from photometric consistency'

    def add_pipeline_arguments(self, parser):
        parser.add_argument('pairs', nargs='+', help='Image pair files or directories of pair files')
        parser.add_argument('--theta', required=True, help='Weight parameters to start from')
        parser.add_argument('--iters', type=int, default=None, help='Adaptation iterations')
        parser.add_argument('--curve-out', default=None, help='Write the photometric loss per iteration as CSV')
        parser.add_argument('--frames', nargs='+', default=None,
                            help='Held-out scene files; pose errors are logged before and after adapting')

    def run_pipeline(self, **options):
        paths = scene_paths(options['pairs'])
        if not paths:
            raise CommandError('No image pair files found')
        pairs = [read_pair(path) for path in paths]
        theta = read_theta(options['theta'])
        cfg = AdaptConfig.from_mapping(self.config)
        if options['iters'] is not None:
            cfg = dataclasses.replace(cfg, iterations=options['iters'])

        frames = read_scenes(options['frames']) if options['frames'] else []
        if frames:
            self.log_frames('before', evaluate_frames(frames, theta))

        result = adapt_weights(pairs, theta, cfg)
        if result.skipped_frames:
            logger.warning(f"{result.skipped_frames} pair updates skipped (unstable eigenvector gradient or unresolved pose sign)")
        if frames:
            self.log_frames('after', evaluate_frames(frames, result.theta))

        if options['curve_out']:
            write_text(Path(options['curve_out']), loss_csv(result.loss))
        self.emit_json(WeightParamsSerializer(result.theta).data, options['out'])

    def log_frames(self, label, errors):
        logger.info(
            f"Held-out frames {label} adapting: median {np.median([e.translation_error for e in errors]):.4f} m / "
            f"{np.median([e.rotation_error for e in errors]):.3f} deg"
        )
