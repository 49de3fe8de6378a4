"""Entry point for shortcot-lab: python -m shortcot_lab."""

from __future__ import annotations

import sys

from shortcot_lab.cli import main

if __name__ == "__main__":
    sys.exit(main())
