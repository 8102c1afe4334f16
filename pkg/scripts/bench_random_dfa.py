"""Generated-machine benchmark: random targets of a given size, best-k-of-n
aggregation per target.

Targets are drawn from a fixed root seed, so the same machines come back on
every invocation; the per-target summary compares mean extracted size
against the minimized target size.
"""

import argparse
import json
from pathlib import Path

from dfalearn.harness import bench_random, write_bench_outputs


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--targets", type=int, default=3)
    parser.add_argument("--states", type=int, default=10)
    parser.add_argument("--symbols", type=int, default=2)
    parser.add_argument("--qmax", type=int, default=100)
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--best-k", type=int, default=5)
    parser.add_argument("--root-seed", type=int, default=2026)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", type=Path, default=Path("runs"))
    args = parser.parse_args()

    rows, summary = bench_random(
        n_targets=args.targets, num_states=args.states,
        alphabet_size=args.symbols, q_max=args.qmax, n_seeds=args.seeds,
        best_k=args.best_k, root_seed=args.root_seed,
        workers=args.workers, keep_going=True,
    )
    name = f"random_{args.states}_{args.symbols}"
    write_bench_outputs(args.out, name, rows, summary,
                        {"command": "bench_random_dfa", "options": vars(args)})
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
