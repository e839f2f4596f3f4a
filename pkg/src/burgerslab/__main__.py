"""Module entry point: python -m burgerslab."""

import sys

from .cli import main

sys.exit(main())
