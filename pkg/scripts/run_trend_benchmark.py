#!/usr/bin/env python3
"""Run the synthetic cross-modal benchmark: 4 mixing modes x N seeds.

Trains the small reference model under bidirectional, both one-directional,
and no-mixing (T=0) schedules on a shared synthetic dataset, then reports
single-shot infrared-to-visible retrieval and the modality gap per mode.
Results land in <out>/benchmark.json and <out>/benchmark.csv; pass the same
--out to the acceptance tests via PROTOMIX_BENCH_DIR to reuse them.
"""

import argparse
import json

from protomix.benchmark import run_benchmark


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="working directory")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--modes", nargs="+", default=None,
                        help="subset of: bidirectional v_to_i i_to_v single_step")
    args = parser.parse_args()
    report = run_benchmark(args.out, seeds=tuple(args.seeds),
                           modes=args.modes, quiet=False)
    print(json.dumps(report["summary"], indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
