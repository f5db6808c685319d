"""GCIR benchmark: SKBO (and optionally the naive design) at K=10, M=100.

    python scripts/table2_gcir.py --reps 25 --out runs/table2
"""

import argparse

import numpy as np

from sdeskbo.harness import ExperimentSpec, bench_gcir, method_label, natural_estimates


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=25)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--with-naive", action="store_true", help="also run the 100-point naive design")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="runs/table2")
    args = ap.parse_args()

    methods = ("naive", "skbo") if args.with_naive else ("skbo",)
    spec = ExperimentSpec(experiment_id="table2-gcir", model="gcir", n_reps=args.reps, methods=methods,
                          smc_grid=[{"K": 10, "M": 100}], seed=args.seed, threads=args.threads,
                          output_dir=args.out)
    res = bench_gcir(spec)
    for row in res.table:
        print(f"{row['method']:<24}{row['parameter']:<8} bias {row['bias']:7.3f}  sd {row['sd']:6.3f}"
              f"  rmse {row['rmse']:6.3f}  added {row['avg_added']:6.1f}")
    nat = natural_estimates(res, method_label("skbo", 10, 100, spec.n_init[0]))
    print("SKBO natural-scale medians (theta0, theta1, gamma, psi):", np.round(np.median(nat, 0), 3))


if __name__ == "__main__":
    main()
