"""Soft-symbol comparison on noisy inputs.

Corrupts every one-hot symbol with Gaussian noise, then trains two ways on
the same corrupted traces: feeding the noisy vectors directly as beliefs,
versus snapping each vector to its nearest symbol first.  Reports mean test
accuracy of both arms per noise level.
"""

import argparse
import json
from pathlib import Path

from dfalearn.harness import belief_noise, write_bench_outputs


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--lang", type=int, default=4)
    parser.add_argument("--variances", type=str, default="0.1,0.3")
    parser.add_argument("--qmax", type=int, default=10)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", type=Path, default=Path("runs"))
    args = parser.parse_args()

    variances = tuple(float(v) for v in args.variances.split(",") if v.strip())
    rows, summary = belief_noise(
        language=args.lang, variances=variances, q_max=args.qmax,
        n_seeds=args.seeds, workers=args.workers, keep_going=True,
    )
    name = f"belief_noise_t{args.lang}"
    write_bench_outputs(args.out, name, rows, summary,
                        {"command": "belief_symbols", "options": vars(args)})
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
