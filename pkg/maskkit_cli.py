#!/usr/bin/env python3
"""
maskkit
=======

Entry point for the synthetic face detection pipeline.

Usage:
    python maskkit_cli.py gen --scenes 512 --seed 0     # Render train/holdout corpora
    python maskkit_cli.py train --steps 2000            # Train the toy model
    python maskkit_cli.py eval --multi-scale --flip     # Evaluate with test-time fusion
    python maskkit_cli.py gradcheck                     # Finite-difference checks

For more options, run: python maskkit_cli.py --help
"""

from maskkit.cli import main

if __name__ == "__main__":
    main()
