#!/usr/bin/env python3
"""
Command-line entry point: python vlv.py <subcommand> [--seed N] [--config FILE] [--work-dir DIR] [--jobs N]
"""

import sys
from dotenv import load_dotenv

# Load environment variables (VLV_SEED, VLV_WORK_DIR, ...) before settings are read
load_dotenv()

from app.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
