import logging
from typing import Any, Optional

from django.core.management.base import BaseCommand, CommandError

from sclocalize.config import load_config
from sclocalize.documents import dump_json, write_text
from sclocalize.exceptions import PipelineError

logger = logging.getLogger(__name__)


class PipelineCommand(BaseCommand):
    """
    Base class for the pipeline subcommands.

    Adds the common --seed/--config/--out flags, loads the merged config and
    turns library errors into CommandError (non-zero exit, message on stderr).
    """

    # Randomized subcommands refuse to run without an explicit --seed
    requires_seed = False

    def add_arguments(self, parser):
        parser.add_argument(
            '--seed',
            type=int,
            required=self.requires_seed,
            help='Seed for every random draw (required for randomized subcommands)',
        )
        parser.add_argument(
            '--config',
            default=None,
            help='Key-value config file overriding the SCWLS defaults',
        )
        parser.add_argument(
            '--out',
            default=None,
            help='Output path (stdout when omitted)',
        )
        self.add_pipeline_arguments(parser)

    def add_pipeline_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        try:
            self.config = load_config(options['config'])
            self.run_pipeline(**options)
        except PipelineError as e:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} failed: {e}", exc_info=True)
            raise CommandError(str(e)) from e

    def run_pipeline(self, **options):
        raise NotImplementedError

    def emit_json(self, payload: Any, out: Optional[str]):
        text = dump_json(payload)
        if out:
            write_text(out, text)
            self.stdout.write(self.style.SUCCESS(f'Wrote {out}'))
        else:
            self.stdout.write(text, ending='')
