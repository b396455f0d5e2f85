#!/usr/bin/env python3
"""
dcscan - Main Application Entry Point

Trains and evaluates two Mamba-style segmentation networks that scan the image
along different routes and teach each other on unlabeled data.

Usage:
    python main.py train --config config/config.yaml
    python main.py eval --checkpoint runs/default/checkpoint --data runs/default/data/manifest.tsv
    python main.py demo scan --size 3
"""

import sys
from pathlib import Path
from dotenv import load_dotenv

# Add src to path for imports
sys.path.append(str(Path(__file__).parent / "src"))

from src.cli.commands import cli


def main():
    """Main application entry point."""
    # Load environment variables (DCSCAN_CONFIG, DCSCAN_THREADS)
    load_dotenv()
    cli()


if __name__ == "__main__":
    main()
