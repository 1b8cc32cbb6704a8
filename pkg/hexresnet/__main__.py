"""Allows running the CLI via ``python -m hexresnet``."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
