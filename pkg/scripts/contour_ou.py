"""Simulated log-likelihood grid for one OU series, with the SKBO design overlaid.

Writes ``contour.csv`` (kind, theta0, theta1, y) ready for any contour plotter.

    python scripts/contour_ou.py --resolution 50 --out runs/contour
"""

import argparse
from pathlib import Path

from sdeskbo.harness import emit_contour
from sdeskbo.models import get_model
from sdeskbo.rng import substream
from sdeskbo.skbo import SkboConfig, run_skbo
from sdeskbo.smc import SmcConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolution", type=int, default=50)
    ap.add_argument("--K", type=int, default=10)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out", default="runs/contour")
    args = ap.parse_args()

    ou = get_model("ou")
    series = ou.simulator([2.0, -3.0], 1000, 0.1, substream(args.seed, "contour-data"))
    smc = SmcConfig(K=args.K, M=args.K**2)
    res = run_skbo(ou, series, SkboConfig(box=ou.default_box, smc=smc, seed=args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_contour(ou, series, ou.default_box, smc, args.resolution, out / "contour.csv", seed=args.seed,
                 trace_points=(res.design.points, res.raw_y))
    print(f"SKBO estimate {res.theta_hat.round(3)} after {res.n_added} added points -> {out / 'contour.csv'}")


if __name__ == "__main__":
    main()
