"""OU benchmark: exact MLE, naive space-filling and SKBO at two SMC settings.

    python scripts/table1_ou.py --reps 100 --out runs/table1
"""

import argparse

from sdeskbo.harness import ExperimentSpec, bench_ou


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="runs/table1")
    args = ap.parse_args()

    spec = ExperimentSpec(experiment_id="table1-ou", model="ou", theta_true=[2.0, -3.0], n_reps=args.reps,
                          seed=args.seed, threads=args.threads, output_dir=args.out)
    res = bench_ou(spec)
    print(f"{'method':<24}{'param':<8}{'bias':>8}{'sd':>8}{'rmse':>8}{'cover':>8}{'added':>8}")
    for row in res.table:
        print(f"{row['method']:<24}{row['parameter']:<8}{row['bias']:>8.3f}{row['sd']:>8.3f}{row['rmse']:>8.3f}"
              f"{row['coverage']:>8.3f}{row['avg_added']:>8.1f}")


if __name__ == "__main__":
    main()
