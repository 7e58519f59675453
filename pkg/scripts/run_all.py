"""Run every experiment and write CSVs plus summary.json.

    python3 scripts/run_all.py                       # defaults, ./results
    python3 scripts/run_all.py --config scripts/quick.ini --out /tmp/quick
"""
import sys

from excursions.harness import main

if __name__ == "__main__":
    sys.exit(main(["all", *sys.argv[1:]]))
