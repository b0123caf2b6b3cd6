#!/usr/bin/env python3
"""
nestattn - Entry Point
Run this script to use the experiment CLI without installing the package.
"""

import sys

from nestattn.cli import main

if __name__ == "__main__":
    sys.exit(main())
