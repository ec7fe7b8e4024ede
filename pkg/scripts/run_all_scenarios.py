"""Run every shipped scenario file and write CSV + summary per scenario.

    python3 scripts/run_all_scenarios.py --out results --workers 4
"""

import argparse
import pathlib
import sys
import time

from consistency_lab.experiments import Scenario, run_scenario, write_outputs

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, help="override the seeds stored in the scenario files")
    args = ap.parse_args()
    failed = 0
    for path in sorted((ROOT / "scenarios").glob("*.json")):
        if path.name.startswith("calibration"):
            continue
        scenario = Scenario.load(path)
        t = time.perf_counter()
        res = run_scenario(scenario, seed=args.seed, workers=args.workers)
        write_outputs(res, args.out)
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {scenario.name} ({time.perf_counter() - t:.1f} s)")
        for a in res.assertions:
            if not a.passed:
                print(f"    {a.name}: observed {a.observed}; required {a.required}")
        failed += not res.passed
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
