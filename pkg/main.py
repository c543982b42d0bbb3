"""
boseloc - Main Entry Point
Runs the command-line pipeline for self-localized states in Bose-Hubbard superlattices.
"""
import sys
from src.cli.command_line_app import main

if __name__ == '__main__':
    sys.exit(main())
