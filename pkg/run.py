#!/usr/bin/env python3
"""
GFT Lab - Entry Point Script
Loads the environment, configures logging and hands the arguments to the CLI.
"""

import sys
from dotenv import load_dotenv

# Load environment variables before src.config reads them
load_dotenv()

from src.cli import run  # noqa: E402
from src.config import setup_logging  # noqa: E402


def main():
    """Main entry point for the laboratory."""
    setup_logging()
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
