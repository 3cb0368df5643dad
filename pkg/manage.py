#!/usr/bin/env python
"""Command-line utility for the localization pipeline."""
import os
import sys


def main():
    """Run a pipeline subcommand."""
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "sclocalize.settings")
    try:
        from evaluation.cli import main as run
    except ImportError as exc:
        raise ImportError(
            f"Couldn't import the command line ({exc}). Are Django and the "
            "packages in requirements.txt installed and on your PYTHONPATH? "
            "Did you forget to activate a virtual environment?"
        ) from exc
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
