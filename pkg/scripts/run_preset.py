#!/usr/bin/env python3
"""Run one built-in lab preset and write its reports.

Usage: python scripts/run_preset.py <preset> [output_dir] [--assert]
Equivalent to ``submoments lab --preset <preset>``; listed here so the
experiment entry points are discoverable next to the package.
"""

import sys

from submoments.cli import available_presets, main

if __name__ == "__main__":
    argv = sys.argv[1:]
    if not argv or argv[0] in ("-h", "--help"):
        print(__doc__.strip())
        print(f"\navailable presets: {', '.join(available_presets())}")
        sys.exit(0)
    name = argv[0]
    out_dir = argv[1] if len(argv) > 1 and not argv[1].startswith("-") else "."
    flags = [a for a in argv[1:] if a.startswith("-")]
    sys.exit(main(["lab", "--preset", name, "--output-dir", out_dir, *flags]))
