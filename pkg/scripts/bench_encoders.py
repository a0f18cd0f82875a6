#!/usr/bin/env python3
"""Scalar encoder comparisons (dual variables vs fuzzy min/max vs DL2)."""
import sys

from logicloss.harness.cli import main

if __name__ == "__main__":
    args = sys.argv[1:] or ["--example", "appendix-c-1"]
    sys.exit(main(["bench-encoders", *args]))
