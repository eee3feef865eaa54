#!/usr/bin/env python
"""Точка входа командной строки navrobust."""
import sys

from navrobust.api.cli import main

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
