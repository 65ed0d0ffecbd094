"""Allow ``python -m mtbridge``."""
import sys

from .cli import main


sys.exit(main())
