"""Print the criteria and trend table from a results directory."""
import argparse
import json
from pathlib import Path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("results", nargs="?", default="results")
    args = ap.parse_args()
    out = Path(args.results)
    summary = json.loads((out / "summary.json").read_text())
    timing = json.loads((out / "timing.json").read_text()) if (out / "timing.json").exists() else {}
    print(f"seed {summary['seed']}  version {summary['version']}")
    for key, c in summary["criteria"].items():
        print(f"{key:4s} {'PASS' if c['passed'] else 'FAIL'}  {c['claim']:30s} {c['experiment']}")
    for name, t in summary["trends"].items():
        print(f"trend {name:30s} {'ok' if t.get('passed') else 'not monotone'}")
    for name, sec in timing.items():
        print(f"time  {name:30s} {sec:8.1f}s")
    return 0 if summary["all_passed"] else 1


if __name__ == "__main__":
    raise SystemExit(main())
