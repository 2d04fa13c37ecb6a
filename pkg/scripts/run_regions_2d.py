#!/usr/bin/env python3
"""Exact 2-D region counts on the grid oracle."""
import sys

from unrectify.cli import main

sys.exit(main(["regions-2d", *sys.argv[1:]]))
