#!/usr/bin/env python3
"""Run the acceptance suite and show one PASS/FAIL line per criterion.

The criteria live in tests/test_acceptance.py; this wrapper runs just
that file with output capture disabled so the [ACCEPT] lines are visible,
and exits with pytest's status.
"""

import subprocess
import sys
from pathlib import Path

if __name__ == "__main__":
    root = Path(__file__).resolve().parent.parent
    code = subprocess.call(
        [sys.executable, "-m", "pytest", str(root / "tests" / "test_acceptance.py"),
         "-v", "-s", *sys.argv[1:]]
    )
    sys.exit(code)
