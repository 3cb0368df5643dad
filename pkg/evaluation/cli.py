"""Console entry point: `manage.py <subcommand> ...`."""

import os
import sys

SUBCOMMANDS = ('simulate', 'solve', 'refine', 'fit', 'adapt', 'eval')

USAGE = (
    "usage: manage.py {" + ",".join(SUBCOMMANDS) + "} [--seed SEED] [--config FILE] [--out PATH] ...\n"
    "Run 'manage.py <subcommand> --help' for the options of a subcommand.\n"
)


def main(argv=None) -> int:
    """Dispatch to the management command; returns the process exit status."""
    argv = sys.argv[1:] if argv is None else list(argv)
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "sclocalize.settings")

    if not argv or argv[0] not in SUBCOMMANDS:
        if argv and argv[0] not in ('-h', '--help'):
            sys.stderr.write(f"Unknown subcommand: {argv[0]}\n")
        sys.stderr.write(USAGE)
        return 0 if argv and argv[0] in ('-h', '--help') else 2

    from django.core.management import ManagementUtility

    try:
        ManagementUtility(['manage.py'] + argv).execute()
    except SystemExit as e:
        if e.code is None:
            return 0
        return e.code if isinstance(e.code, int) else 1
    return 0
