#!/usr/bin/env python
"""Entry point of the evalguard commands: fit, curve, detect, verify, bh and simulate."""
import os
import sys


def main():
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "evalguard.settings")
    try:
        from django.core.management import execute_from_command_line
    except ImportError as e:
        raise ImportError(
            "Couldn't import Django. Install the requirements (pip3 install -r requirements.txt) "
            "in the active virtual environment."
        ) from e
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()
