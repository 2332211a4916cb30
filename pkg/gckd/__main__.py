"""Allow ``python -m gckd``."""
import sys

from gckd.main import main

sys.exit(main())
