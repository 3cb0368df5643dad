import dataclasses
from pathlib import Path

from django.core.management.base import CommandError

from sclocalize.commands import PipelineCommand
from simulator.models import SceneParams
from simulator.serializers import ImagePairSerializer, SceneSerializer, write_pair, write_scene
from simulator.services import generate_image_pair, generate_sequence, scene_from_params


class Command(PipelineCommand):
    help = 'Generate a synthetic scene, image pair or frame sequence'
    requires_seed = True

    def add_pipeline_arguments(self, parser):
        parser.add_argument('--n', type=int, default=None, help='Number of scene points (N > 6)')
        parser.add_argument('--outliers', type=float, default=None, help='Outlier fraction in [0, 1)')
        parser.add_argument('--pixel-noise', type=float, default=None, help='Pixel noise sigma (px)')
        parser.add_argument('--coord-noise', type=float, default=None, help='Scene coordinate noise sigma (m)')
        mode = parser.add_mutually_exclusive_group()
        mode.add_argument('--pair', action='store_true', help='Write an image pair instead of a scene')
        mode.add_argument(
            '--sequence',
            type=int,
            default=None,
            metavar='FRAMES',
            help='Write a frame sequence (frames/ and pairs/ under --out)',
        )
        parser.add_argument('--baseline', type=float, default=0.05, help='Camera displacement between views (m)')

    def run_pipeline(self, **options):
        params = SceneParams.from_mapping(self.config)
        overrides = {
            'n_points': options['n'],
            'outlier_fraction': options['outliers'],
            'pixel_noise_sigma': options['pixel_noise'],
            'coord_noise_sigma': options['coord_noise'],
        }
        params = dataclasses.replace(params, **{k: v for k, v in overrides.items() if v is not None})
        seed, out = options['seed'], options['out']

        if options['sequence'] is not None:
            if not out:
                raise CommandError('--sequence needs --out DIRECTORY')
            self.write_sequence(params, options['sequence'], options['baseline'], seed, Path(out))
        elif options['pair']:
            pair = generate_image_pair(params, options['baseline'], seed)
            if out:
                write_pair(pair, out)
                self.stdout.write(self.style.SUCCESS(f'Wrote {out}'))
            else:
                self.emit_json(ImagePairSerializer(pair).data, None)
        else:
            scene = scene_from_params(params, seed)
            if out:
                write_scene(scene, out)
                self.stdout.write(self.style.SUCCESS(f'Wrote {out}'))
            else:
                self.emit_json(SceneSerializer(scene).data, None)

    def write_sequence(self, params, n_frames, baseline, seed, out: Path):
        interval = int(self.config['adapt.frame_interval'])
        sequence = generate_sequence(params, n_frames, baseline, seed, frame_interval=interval)
        for index, scene in enumerate(sequence.scenes):
            write_scene(scene, out / 'frames' / f'frame_{index:03d}.json')
        for index, pair in enumerate(sequence.pairs):
            write_pair(pair, out / 'pairs' / f'pair_{index:03d}.json')
        self.stdout.write(self.style.SUCCESS(
            f'Wrote {len(sequence.scenes)} frames and {len(sequence.pairs)} pairs to {out}'
        ))
