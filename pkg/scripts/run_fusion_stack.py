#!/usr/bin/env python3
"""Partition refinement statistics for a two-channel fusion stack."""
import sys

from unrectify.cli import main

sys.exit(main(["fusion-stack", *sys.argv[1:]]))
