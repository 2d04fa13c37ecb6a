#!/usr/bin/env python3
"""Partition statistics at the LeNet-5 probe levels."""
import sys

from unrectify.cli import main

sys.exit(main(["lenet-partition", *sys.argv[1:]]))
