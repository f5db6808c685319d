"""Command-line entry point: ``sdeskbo <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .harness import ExperimentSpec, write_rows
from .models import ObservedSeries, ThetaBox, get_model
from .regions import coverage_experiment, lrt_region, rao_region
from .rng import substream
from .skbo import SkboConfig, run_skbo
from .smc import SAMPLERS, SmcConfig, loglik_estimate
from .stocks import TRADING_DT, default_stock_config, ingest_prices, stock_analysis

log = logging.getLogger("sdeskbo")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def read_series(path, dt: float | None = None) -> ObservedSeries:
    """Load ``time,value`` (as written by ``simulate``) or a ``Date, Adj Close`` price file."""
    with open(path, newline="") as fh:
        header = [h.strip() for h in next(csv.reader(fh))]
    if "Adj Close" in header:
        return ingest_prices(path).to_series(dt or TRADING_DT)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] == 1:
        return ObservedSeries.regular(data[:, 0], dt or 1.0)
    series = ObservedSeries(data[:, 0], data[:, 1])
    return ObservedSeries.regular(series.values, dt) if dt else series


def write_series(path, series: ObservedSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "value"])
        for t, x in zip(series.times, series.values):
            w.writerow([repr(float(t)), repr(float(x))])


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, default=_json_default))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _spec(args, **defaults) -> ExperimentSpec:
    """Experiment spec from ``--config`` (if any) with CLI overrides applied."""
    doc = dict(defaults)
    if args.config:
        doc.update(json.loads(Path(args.config).read_text()))
    if args.seed is not None:
        doc["seed"] = args.seed
    doc["threads"] = args.threads
    doc["output_dir"] = str(args.out)
    if getattr(args, "reps", None) is not None:
        doc["n_reps"] = args.reps
    return ExperimentSpec(**doc)


def _theta(args, model, spec_theta=None) -> np.ndarray:
    if args.theta is not None:
        theta = np.asarray(_floats(args.theta))
        return model.from_natural(theta) if args.natural else theta
    if spec_theta is not None:
        return np.asarray(spec_theta, dtype=float)
    raise SystemExit("error: --theta is required")


def _box(model, spec: ExperimentSpec | None) -> ThetaBox:
    if spec is not None and spec.box:
        return ThetaBox.from_dict(spec.box)
    return model.default_box


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else int(args.seed)


# --- commands ------------------------------------------------------------------


def cmd_simulate(args) -> int:
    model = get_model(args.model)
    theta = _theta(args, model)
    rng = substream(_seed(args), "simulate")
    series = model.simulator(theta, args.n_obs, args.dt, rng, x0=args.x0)
    out = _out(args)
    write_series(out / "series.csv", series)
    write_json(out / "summary.json", {"command": "simulate", "model": model.name, "theta": theta,
                                      "natural": model.natural(theta), "n_obs": args.n_obs, "dt": args.dt,
                                      "seed": _seed(args)})
    print(out / "series.csv")
    return 0


def cmd_loglik(args) -> int:
    model = get_model(args.model)
    theta = _theta(args, model)
    series = read_series(args.data, args.dt)
    smc = SmcConfig(K=args.K, M=args.M, sampler=args.sampler)
    est = loglik_estimate(model, theta, series, smc, substream(_seed(args), "loglik"))
    doc = {"command": "loglik", "model": model.name, "theta": theta, "K": smc.K, "M": smc.M,
           "sampler": smc.sampler, "loglik": est.value, "mc_se": est.mc_se, "n_floored": est.n_floored}
    if model.exact_logpdf is not None:
        doc["exact_loglik"] = model.exact_loglik(theta, series)
    write_json(_out(args) / "summary.json", doc)
    print(f"loglik {est.value:.6f}  mc_se {est.mc_se:.6f}")
    return 0


def _skbo_config(args, model, spec: ExperimentSpec | None) -> SkboConfig:
    return SkboConfig(
        box=_box(model, spec),
        n_init=args.n_init,
        max_points=args.max_points,
        acquisition_mode=args.acquisition,
        smc=SmcConfig(K=args.K, M=args.M, sampler=args.sampler),
        seed=_seed(args),
    )


def cmd_skbo(args) -> int:
    model = get_model(args.model)
    spec = None
    if args.config:
        spec = ExperimentSpec(**json.loads(Path(args.config).read_text()))
    series = read_series(args.data, args.dt)
    config = _skbo_config(args, model, spec)
    out = _out(args)
    ckpt = args.checkpoint or (out / "checkpoint.json")
    res = run_skbo(model, series, config, checkpoint=ckpt, resume=args.resume)
    write_rows(out / "trace.csv", res.trace.to_rows())
    doc = {"command": "skbo", "model": model.name, "theta_hat": res.theta_hat,
           "natural_hat": model.natural(res.theta_hat), "eta_at_hat": res.eta_at_hat,
           "stop_reason": res.stop_reason, "n_added": res.n_added, "n_failed": res.n_failed,
           "hyper": res.gp.hyper.__dict__, "alpha": args.alpha}
    if model.p <= 3:
        region = lrt_region(res, args.alpha, args.resolution)
        _write_mask(out / "region_mask.csv", region.axes, region.mask)
        doc["region_cells"] = int(region.mask.sum())
        if region.contours:
            write_rows(out / "contour.csv", [
                {"contour": k, "theta0": float(a), "theta1": float(b)}
                for k, c in enumerate(region.contours) for a, b in c
            ])
    try:
        rao = rao_region(res, args.alpha)
        doc["rao_shape"] = rao.shape
        doc["rao_projected"] = rao.projected
    except np.linalg.LinAlgError as exc:
        doc["rao_error"] = str(exc)
    write_json(out / "summary.json", doc)
    print("theta_hat", " ".join(f"{v:.6g}" for v in res.theta_hat), f"({res.stop_reason}, {res.n_added} added)")
    return 0


def _write_mask(path, axes, mask) -> None:
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    rows = [dict({f"theta{j}": float(v) for j, v in enumerate(pt)}, inside=int(m))
            for pt, m in zip(mesh, mask.reshape(-1))]
    write_rows(path, rows)


def _print_table(table: list[dict]) -> None:
    for row in table:
        if "parameter" in row:
            print(f"{row['method']:<28} {row['parameter']:<8} bias {row['bias']:+.3f}  sd {row['sd']:.3f}  "
                  f"rmse {row['rmse']:.3f}")


def cmd_bench_ou(args) -> int:
    spec = _spec(args, experiment_id="bench-ou", model="ou")
    _out(args)
    res = harness.bench_ou(spec)
    _print_table(res.table)
    return 0


def cmd_bench_gcir(args) -> int:
    spec = _spec(args, experiment_id="bench-gcir", model="gcir", smc_grid=[{"K": 10, "M": 100}],
                 methods=["naive", "skbo"], n_reps=25)
    _out(args)
    res = harness.bench_gcir(spec)
    _print_table(res.table)
    return 0


def cmd_stocks(args) -> int:
    out = _out(args)
    rows = []
    for k, path in enumerate(args.prices):
        prices = ingest_prices(path)
        cfg = default_stock_config(seed=int(substream(_seed(args), "stocks", k).integers(0, 2**63 - 1)))
        rec = stock_analysis(prices, cfg)
        rows.append(dict({"series": Path(path).stem}, **rec.to_dict()))
        g = rec.gbm
        line = f"{Path(path).stem}: GBM ll {g.loglik:.1f} AIC {rec.gbm_aic:.1f}"
        if not rec.partial:
            line += f" | gen ll {rec.gen_loglik:.1f} AIC {rec.gen_aic:.1f} LRT {rec.lrt:.1f} p {rec.p_value:.3g}"
        print(line)
    write_rows(out / "result_table.csv", rows)
    write_json(out / "summary.json", {"command": "stocks", "seed": _seed(args), "rows": rows})
    return 0


def cmd_contour(args) -> int:
    model = get_model(args.model)
    spec = None
    if args.config:
        spec = ExperimentSpec(**json.loads(Path(args.config).read_text()))
    series = read_series(args.data, args.dt)
    smc = SmcConfig(K=args.K, M=args.M, sampler=args.sampler)
    box = _box(model, spec)
    trace = None
    if args.with_skbo:
        res = run_skbo(model, series, SkboConfig(box=box, smc=smc, seed=_seed(args)))
        trace = (res.design.points, res.raw_y)
    out = _out(args)
    harness.emit_contour(model, series, box, smc, args.resolution, out / "contour.csv", seed=_seed(args),
                         trace_points=trace)
    print(out / "contour.csv")
    return 0


def cmd_coverage(args) -> int:
    spec = _spec(args, experiment_id="coverage", model="ou", theta_true=[2.0, -3.0], n_reps=200)
    model = spec.model_obj
    config = spec.skbo_config(args.K, args.M or args.K**2, spec.n_init[0], spec.seed)
    res = coverage_experiment(model, spec.theta_true, spec.n_reps, config, alpha=spec.alpha,
                              n_obs=spec.n_obs, dt=spec.dt, x0=spec.x0, n_jobs=spec.threads)
    doc = {"command": "coverage", "spec": spec.to_dict(), "coverage": res.proportion, "se": res.se,
           "n_ok": res.n_ok, "n_failed": res.n_failed}
    write_json(_out(args) / "summary.json", doc)
    print(f"coverage {res.proportion:.3f} (se {res.se:.3f}, {res.n_ok} ok, {res.n_failed} failed)")
    return 0


# --- parser --------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="master seed (u64)")
    parser.add_argument("--config", default=d(None), help="JSON file mirroring ExperimentSpec")
    parser.add_argument("--out", default=d("out"), help="output directory")
    parser.add_argument("--threads", type=int, default=d(1), help="worker processes for replicates")


def _smc_flags(p, K=10):
    p.add_argument("--K", type=int, default=K, help="subintervals per observation interval")
    p.add_argument("--M", type=int, default=None, help="importance draws (default K^2)")
    p.add_argument("--sampler", choices=SAMPLERS, default="modified_brownian_bridge")


def _model_flags(p, default="ou"):
    p.add_argument("--model", default=default, choices=["ou", "gcir", "gbm", "gen_gbm"])
    p.add_argument("--theta", help="parameter vector, comma separated (search scale)")
    p.add_argument("--natural", action="store_true", help="--theta is on the natural scale")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdeskbo", description=__doc__)
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    globals_ = argparse.ArgumentParser(add_help=False)
    _global_flags(globals_, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[globals_], help="simulate a series from a model")
    _model_flags(p)
    p.add_argument("--n-obs", type=int, default=1000)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--x0", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("loglik", parents=[globals_], help="simulated log-likelihood at one parameter")
    _model_flags(p)
    _smc_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--dt", type=float, default=None, help="override the sampling interval")
    p.set_defaults(func=cmd_loglik)

    p = sub.add_parser("skbo", parents=[globals_], help="SKBO maximum-likelihood search")
    _model_flags(p)
    _smc_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--n-init", type=int, default=None)
    p.add_argument("--max-points", type=int, default=None)
    p.add_argument("--acquisition", choices=["candidate_grid", "local_polish"], default="candidate_grid")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_skbo)

    p = sub.add_parser("bench-ou", parents=[globals_], help="replicated OU study")
    p.add_argument("--reps", type=int, default=None)
    p.set_defaults(func=cmd_bench_ou)

    p = sub.add_parser("bench-gcir", parents=[globals_], help="replicated GCIR study")
    p.add_argument("--reps", type=int, default=None)
    p.set_defaults(func=cmd_bench_gcir)

    p = sub.add_parser("stocks", parents=[globals_], help="GBM vs generalized GBM on price files")
    p.add_argument("prices", nargs="+", help="CSV files with Date and Adj Close columns")
    p.set_defaults(func=cmd_stocks)

    p = sub.add_parser("contour", parents=[globals_], help="log-likelihood grid for a two-parameter model")
    p.add_argument("--model", default="ou", choices=["ou", "gbm"])
    _smc_flags(p, K=5)
    p.add_argument("--data", required=True)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--with-skbo", action="store_true", help="append an SKBO design to the grid")
    p.set_defaults(func=cmd_contour)

    p = sub.add_parser("coverage", parents=[globals_], help="LRT-region coverage on simulated OU data")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--M", type=int, default=None)
    p.set_defaults(func=cmd_coverage)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
