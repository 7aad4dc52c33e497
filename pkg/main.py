#!/usr/bin/env python3
"""
Stack-trace deduplication engine.
Main entry point for the application.
"""

import sys

from dedup.cli import main

if __name__ == "__main__":
    sys.exit(main())
