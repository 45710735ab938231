#!/usr/bin/env python3
"""Entry point usable without installation: python3 export.py --images ..."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

from featexport.cli import main

if __name__ == "__main__":
    sys.exit(main())
