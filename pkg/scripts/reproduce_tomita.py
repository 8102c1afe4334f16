"""Reproduce the Tomita grammar table: train/extract on each language over
several seeds and report test accuracy and extracted machine sizes.

On a single desktop core the clean seven-language sweep takes roughly
15-20 minutes with the default restart budget.  Pass ``--flip 0.01`` for the
label-noise variant (which widens the state budget for Tomita 1 to 30, the
setting the noisy table was produced with).
"""

import argparse
from pathlib import Path

from dfalearn.harness import bench_tomita, write_bench_outputs


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--langs", type=int, nargs="+", default=list(range(1, 8)))
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--qmax", type=int, default=0,
                        help="state budget; 0 = the table's standard values")
    parser.add_argument("--flip", type=float, default=0.0,
                        help="fraction of training labels flipped")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", type=Path, default=Path("runs"))
    return parser.parse_args()


def main():
    args = parse_args()
    if args.qmax:
        q_max = args.qmax
    else:
        q_max = {lang: 10 for lang in args.langs}
        if args.flip and 1 in q_max:
            q_max[1] = 30
    rows, summary = bench_tomita(
        languages=args.langs,
        n_seeds=args.seeds,
        q_max=q_max,
        flip_fraction=args.flip,
        workers=args.workers,
        keep_going=True,
    )
    name = "tomita" if not args.flip else f"tomita_flip{args.flip:g}"
    write_bench_outputs(args.out, name, rows, summary,
                        {"command": "reproduce_tomita", "options": vars(args)})

    print(f"{'target':<22}{'runs':>5}{'acc':>8}{'|Q|':>6}{'exact':>7}{'sec':>8}")
    for entry in summary:
        print(f"{entry['target']:<22}{entry['runs']:>5}"
              f"{entry['mean_test_acc']:>8.4f}{entry['mean_q_hat']:>6.1f}"
              f"{entry.get('exact_runs', '-'):>7}{entry['mean_seconds']:>8.1f}")
    failed = [r for r in rows if r.get("error")]
    if failed:
        print(f"\n{len(failed)} runs failed:")
        for r in failed:
            print(f"  {r['target']} seed {r['seed']}: {r['error']}")
    print(f"\nwrote {args.out}/{name}.csv and {name}_summary.{{json,csv}}")


if __name__ == "__main__":
    main()
