"""Label-noise robustness curve: one language, a range of flip rates, a
deliberately oversized state budget.

The point of the oversized budget (default 200 states) is that the learner
could in principle memorize the flipped labels, and the curve shows whether
it does: median extracted size staying near the target's true size while
median test accuracy stays high means the noise was ignored, not absorbed.
"""

import argparse
import json
from pathlib import Path

from dfalearn.harness import ablate_label_noise, write_bench_outputs


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--lang", type=int, default=5)
    parser.add_argument("--rates", type=str, default="0,0.05,0.10,0.15",
                        help="comma-separated flip fractions")
    parser.add_argument("--qmax", type=int, default=200)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", type=Path, default=Path("runs"))
    args = parser.parse_args()

    rates = tuple(float(r) for r in args.rates.split(",") if r.strip())
    rows, summary = ablate_label_noise(
        language=args.lang, rates=rates, q_max=args.qmax,
        n_seeds=args.seeds, workers=args.workers, keep_going=True,
    )
    name = f"ablate_noise_t{args.lang}_q{args.qmax}"
    write_bench_outputs(args.out, name, rows, summary,
                        {"command": "ablate_label_noise", "options": vars(args)})
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
