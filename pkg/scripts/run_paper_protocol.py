#!/usr/bin/env python3
"""Run the size/power study presets and collect one tidy CSV.

Desk-scale presets finish in minutes; the full grids reproduce the complete
protocol (hundreds of cells at 1000 replicates x 1000 resamples) and are
meant for an overnight machine, not CI.

    python scripts/run_paper_protocol.py --preset paper-size-small --out size.csv
    python scripts/run_paper_protocol.py --preset paper-size-nightly --workers 8
"""

import argparse
import csv
import sys

from mcvtests.sim import TIDY_COLUMNS, preset_configs, run_scenario, tidy_rows


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--preset", default="paper-size-small")
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    configs = preset_configs(args.preset)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.DictWriter(fh, fieldnames=list(TIDY_COLUMNS), lineterminator="\n")
    writer.writeheader()
    for i, cfg in enumerate(configs, start=1):
        result = run_scenario(cfg, workers=args.workers)
        for row in tidy_rows(result):
            writer.writerow(row)
        fh.flush()
        print(
            f"[{i}/{len(configs)}] {cfg.name}: {result.wall_clock:.0f}s",
            file=sys.stderr,
            flush=True,
        )
    if args.out:
        fh.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
