#!/usr/bin/env python3
"""Gain curves and stability certificates, raw and rescaled."""
import sys

from unrectify.cli import main

sys.exit(main(["stability-gain", *sys.argv[1:]]))
