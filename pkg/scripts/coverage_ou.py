"""Coverage of the 95% LRT region on simulated OU data.

    python scripts/coverage_ou.py --reps 200 --K 10
"""

import argparse

from sdeskbo.models import get_model
from sdeskbo.regions import coverage_experiment
from sdeskbo.rng import substream
from sdeskbo.skbo import SkboConfig
from sdeskbo.smc import SmcConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--K", type=int, default=10)
    ap.add_argument("--n-init", type=int, default=20)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    ou = get_model("ou")
    cfg = SkboConfig(box=ou.default_box, n_init=args.n_init, smc=SmcConfig(K=args.K, M=args.K**2), seed=args.seed)
    res = coverage_experiment(ou, [2.0, -3.0], args.reps, cfg, alpha=args.alpha,
                              rng=substream(args.seed, "coverage"), n_jobs=args.threads)
    print(f"coverage {res.proportion:.3f} (se {res.se:.3f}) over {res.n_ok} replicates, {res.n_failed} failed")


if __name__ == "__main__":
    main()
