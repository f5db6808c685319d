"""Replicated benchmark experiments and their summary tables."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .gp import DesignSet, fit_posterior_mode, mc_nugget_prior
from .models import ObservedSeries, SdeModel, ThetaBox, get_model, ou_exact_mle
from .regions import LrtRegion, chi2_threshold
from .rng import substream
from .skbo import SkboConfig, best_explored, floor_values, latin_hypercube, run_skbo
from .smc import SmcConfig, loglik_estimate

log = logging.getLogger(__name__)


@dataclass
class ExperimentSpec:
    """One replicated experiment. JSON configs mirror these fields."""

    experiment_id: str
    model: str
    theta_true: Optional[list] = None
    data_path: Optional[str] = None
    n_reps: int = 100
    smc_grid: list = field(default_factory=lambda: [{"K": 5, "M": 25}, {"K": 10, "M": 100}])
    methods: tuple = ("exact", "naive", "skbo")
    n_init: list = field(default_factory=lambda: [20])
    naive_points: Optional[list] = None
    max_points: Optional[int] = None
    stop_tol: float = 0.01
    stop_patience: int = 5
    acquisition_mode: str = "candidate_grid"
    floor_gap: Optional[float] = 1000.0
    box: Optional[dict] = None
    n_obs: int = 1000
    dt: float = 0.1
    x0: Optional[float] = None
    alpha: float = 0.05
    n_bootstrap: int = 1000
    seed: int = 2024
    threads: int = 1
    output_dir: Optional[str] = None

    def __post_init__(self):
        if "exact" in self.methods and get_model(self.model).exact_logpdf is None:
            raise ValueError(f"method 'exact' needs a closed-form density; {self.model} has none")
        self.methods = tuple(self.methods)
        self.smc_grid = [dict(g, M=g.get("M") or g["K"] ** 2) for g in self.smc_grid]

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        return cls(**json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def model_obj(self) -> SdeModel:
        return get_model(self.model)

    @property
    def search_box(self) -> ThetaBox:
        return ThetaBox.from_dict(self.box) if self.box else self.model_obj.default_box

    def skbo_config(self, K, M, n_init, seed) -> SkboConfig:
        return SkboConfig(
            box=self.search_box, n_init=n_init, max_points=self.max_points, stop_tol=self.stop_tol,
            stop_patience=self.stop_patience, acquisition_mode=self.acquisition_mode, floor_gap=self.floor_gap,
            smc=SmcConfig(K=K, M=M), seed=seed,
        )


@dataclass(frozen=True)
class NaiveResult:
    theta_hat: np.ndarray
    n_evals: int
    design: DesignSet
    gp: object = None
    eta_at_hat: float = float("nan")


def naive_baseline(
    model: SdeModel,
    series: ObservedSeries,
    box: ThetaBox,
    n_points: int,
    smc: SmcConfig,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
    extract: str = "kriging",
    floor_gap: float | None = 1000.0,
) -> NaiveResult:
    """One-shot Latin hypercube design of simulated log-likelihoods.

    The estimate is the design point with the largest kriging mean (the SKBO
    extraction rule), or the largest raw value when ``extract="raw"`` or when
    there are too few points to fit a surrogate. The surrogate sees values
    floored ``floor_gap`` below the best one, as in SKBO.
    """
    if n_points < 1:
        raise ValueError("n_points must be positive")
    if seed is None:
        seed = int((rng or np.random.default_rng()).integers(0, 2**63 - 1))
    pts = latin_hypercube(box, n_points, substream(seed, "lhs"))
    ys, ses = [], []
    for i, th in enumerate(pts):
        est = loglik_estimate(model, th, series, smc, substream(seed, "eval", i))
        ys.append(est.value)
        ses.append(est.mc_se)
    design = DesignSet.build(pts, floor_values(ys, floor_gap), box, ses)
    if extract == "raw" or n_points < 3:
        i = int(np.argmax(design.y))
        return NaiveResult(pts[i].copy(), n_points, design, None, float(design.y[i]))
    state = fit_posterior_mode(design, prior=mc_nugget_prior(design), rng=substream(seed, "gp", n_points))
    i, eta = best_explored(state)
    return NaiveResult(pts[i].copy(), n_points, design, state, eta)


# --- result tables --------------------------------------------------------------


@dataclass
class ReplicateRecord:
    replicate: int
    method: str
    estimate: list
    n_added: Optional[int]
    n_evals: int
    seconds: float
    covered: Optional[bool] = None
    failed: bool = False


def _stats(err: np.ndarray):
    """Bias, SD (ddof 0) and RMSE along the replicate axis ``-2``."""
    bias = err.mean(axis=-2)
    sd = err.std(axis=-2)
    rmse = np.sqrt((err**2).mean(axis=-2))
    return bias, sd, rmse


def summarize(records, truth, param_names, n_bootstrap=1000, rng=None) -> list[dict]:
    """Per-method, per-parameter bias/SD/RMSE rows with bootstrap SEs."""
    rng = rng if rng is not None else np.random.default_rng(0)
    truth = np.asarray(truth, dtype=float)
    methods = list(dict.fromkeys(r.method for r in records))
    rows = []
    for m in methods:
        recs = [r for r in records if r.method == m]
        ok = [r for r in recs if not r.failed]
        base = {
            "method": m,
            "n_reps": len(ok),
            "n_failed": len(recs) - len(ok),
            "avg_added": _mean_or_nan([r.n_added for r in ok if r.n_added is not None]),
            "avg_evals": _mean_or_nan([r.n_evals for r in ok]),
            "avg_time": _mean_or_nan([r.seconds for r in ok]),
            "coverage": _mean_or_nan([float(r.covered) for r in ok if r.covered is not None]),
        }
        if not ok:
            rows.append(base)
            continue
        err = np.array([r.estimate for r in ok]) - truth
        bias, sd, rmse = _stats(err)
        idx = rng.integers(0, len(ok), size=(n_bootstrap, len(ok)))
        bb, bs, br = _stats(err[idx])
        for j, name in enumerate(param_names):
            rows.append(
                dict(
                    base, parameter=name,
                    bias=float(bias[j]), bias_se=float(bb[:, j].std()),
                    sd=float(sd[j]), sd_se=float(bs[:, j].std()),
                    rmse=float(rmse[j]), rmse_se=float(br[:, j].std()),
                )
            )
    return rows


def _mean_or_nan(xs):
    return float(np.mean(xs)) if len(xs) else float("nan")


@dataclass
class BenchResult:
    spec: ExperimentSpec
    records: list
    table: list

    def estimates(self, method: str) -> np.ndarray:
        return np.array([r.estimate for r in self.records if r.method == method and not r.failed])

    def by_method(self, method: str) -> list:
        return [r for r in self.records if r.method == method]

    def rmse(self, method: str) -> np.ndarray:
        err = self.estimates(method) - np.asarray(self.spec.theta_true)
        return np.sqrt((err**2).mean(axis=0))

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_rows(out / "result_table.csv", self.table)
        write_rows(out / "replicates.csv", [_record_row(r) for r in self.records])
        (out / "summary.json").write_text(json.dumps({"spec": self.spec.to_dict(), "table": self.table}, indent=1, default=float))


def _record_row(r: ReplicateRecord) -> dict:
    row = {k: v for k, v in asdict(r).items() if k != "estimate"}
    row.update({f"est_{j}": v for j, v in enumerate(r.estimate)})
    return row


def write_rows(path, rows: list[dict]) -> None:
    keys = list(dict.fromkeys(k for row in rows for k in row))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in keys})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


# --- benchmarks ------------------------------------------------------------------


def method_label(kind: str, K=None, M=None, n=None) -> str:
    if kind == "exact":
        return "exact"
    return f"{kind} K={K} M={M} n={n}"


def _simulate_replicate(spec: ExperimentSpec, r: int) -> ObservedSeries:
    model = spec.model_obj
    g = substream(spec.seed, spec.experiment_id, "data", r)
    return model.simulator(np.asarray(spec.theta_true, dtype=float), spec.n_obs, spec.dt, g, x0=spec.x0)


def _run_replicate(spec: ExperimentSpec, r: int) -> list[ReplicateRecord]:
    model = spec.model_obj
    truth = np.asarray(spec.theta_true, dtype=float)
    series = _simulate_replicate(spec, r)
    q = chi2_threshold(spec.alpha, model.p)
    out = []
    if "exact" in spec.methods:
        t0 = time.perf_counter()
        if model.name != "ou":
            raise ValueError("exact column is implemented for the OU model")
        theta_hat, ll_hat = ou_exact_mle(series)
        covered = 2.0 * (ll_hat - model.exact_loglik(truth, series)) <= q
        out.append(ReplicateRecord(r, "exact", theta_hat.tolist(), None, 0, time.perf_counter() - t0, bool(covered)))
    for g in spec.smc_grid:
        K, M = int(g["K"]), int(g["M"])
        smc = SmcConfig(K=K, M=M)
        if "naive" in spec.methods:
            for n in spec.naive_points or [25 * model.p]:
                label = method_label("naive", K, M, n)
                t0 = time.perf_counter()
                try:
                    res = naive_baseline(model, series, spec.search_box, n, smc,
                                         seed=_method_seed(spec, "naive", K, n, r), floor_gap=spec.floor_gap)
                    out.append(ReplicateRecord(r, label, res.theta_hat.tolist(), None, n, time.perf_counter() - t0))
                except Exception as exc:  # noqa: BLE001
                    log.warning("replicate %d %s failed: %s", r, label, exc)
                    out.append(ReplicateRecord(r, label, [], None, 0, 0.0, failed=True))
        if "skbo" in spec.methods:
            for n0 in spec.n_init:
                label = method_label("skbo", K, M, n0)
                cfg = spec.skbo_config(K, M, n0, _method_seed(spec, "skbo", K, n0, r))
                t0 = time.perf_counter()
                try:
                    res = run_skbo(model, series, cfg)
                    region = LrtRegion(res.gp, res.theta_hat, res.eta_at_hat, q, [], np.zeros(0, bool))
                    out.append(
                        ReplicateRecord(r, label, res.theta_hat.tolist(), res.n_added, res.n_evaluations,
                                        time.perf_counter() - t0, region.contains(truth))
                    )
                except Exception as exc:  # noqa: BLE001
                    log.warning("replicate %d %s failed: %s", r, label, exc)
                    out.append(ReplicateRecord(r, label, [], None, 0, 0.0, failed=True))
    return out


def _method_seed(spec, kind, K, n, r) -> int:
    return int(substream(spec.seed, spec.experiment_id, kind, K, n, r).integers(0, 2**63 - 1))


def run_experiment(spec: ExperimentSpec, replicates=None) -> BenchResult:
    """Run every replicate of ``spec`` and aggregate a result table.

    Replicate ``r`` draws its data and method seeds from substreams keyed by
    ``(experiment_id, r)``, so results do not depend on ``threads`` or on
    which subset of replicates is run.
    """
    if spec.theta_true is None:
        raise ValueError("benchmarks need theta_true")
    reps = range(spec.n_reps) if replicates is None else replicates
    if spec.threads == 1:
        nested = [_run_replicate(spec, r) for r in reps]
    else:
        from joblib import Parallel, delayed

        nested = Parallel(n_jobs=spec.threads)(delayed(_run_replicate)(spec, r) for r in reps)
    records = sorted((rec for recs in nested for rec in recs), key=lambda x: (x.method, x.replicate))
    table = summarize(
        records, spec.theta_true, spec.model_obj.param_names, spec.n_bootstrap,
        substream(spec.seed, spec.experiment_id, "bootstrap"),
    )
    result = BenchResult(spec, records, table)
    if spec.output_dir:
        result.write(spec.output_dir)
    return result


def bench_ou(spec: ExperimentSpec) -> BenchResult:
    """OU study: stationary start, exact conditional draws, exact MLE column."""
    if spec.model != "ou":
        raise ValueError("bench_ou needs model 'ou'")
    if spec.theta_true is None:
        spec.theta_true = [2.0, -3.0]
    return run_experiment(spec)


def bench_gcir(spec: ExperimentSpec) -> BenchResult:
    """GCIR study: fine-grid Euler simulation subsampled to the observation grid."""
    if spec.model != "gcir":
        raise ValueError("bench_gcir needs model 'gcir'")
    model = spec.model_obj
    if spec.theta_true is None:
        spec.theta_true = model.from_natural((0.5, -0.25, 1.0, 0.75)).tolist()
    if spec.x0 is None:
        nat = model.natural(spec.theta_true)
        spec.x0 = nat[0] / -nat[1]
    if spec.naive_points is None:
        spec.naive_points = [100]
    spec.methods = tuple(m for m in spec.methods if m != "exact")
    return run_experiment(spec)


def natural_estimates(result: BenchResult, method: str) -> np.ndarray:
    """Back-transformed estimates, e.g. ``(theta0, theta1, gamma, psi)`` for GCIR."""
    model = result.spec.model_obj
    return np.array([model.natural(e) for e in result.estimates(method)])


# --- contour data ----------------------------------------------------------------


def emit_contour(
    model: SdeModel,
    series: ObservedSeries,
    box: ThetaBox,
    smc: SmcConfig,
    resolution: int,
    path,
    seed: int = 0,
    trace_points=None,
) -> list[dict]:
    """Simulated log-likelihood on a ``resolution x resolution`` grid, as CSV.

    Grid cell ``(i, j)`` is evaluated with the substream ``(seed, "contour",
    i, j)``. ``trace_points`` (e.g. an SKBO design) are appended as extra rows
    with ``kind`` set to ``"trace"``.
    """
    if model.p != 2 or box.p != 2:
        raise ValueError("contour output needs a two-parameter model")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(box.lower, box.upper)]
    rows = []
    for i, a in enumerate(axes[0]):
        for j, b in enumerate(axes[1]):
            est = loglik_estimate(model, (a, b), series, smc, contour_stream(seed, i, j))
            rows.append({"kind": "grid", "theta0": float(a), "theta1": float(b), "y": est.value})
    if trace_points is not None:
        pts, ys = trace_points
        for th, y in zip(np.atleast_2d(pts), ys):
            rows.append({"kind": "trace", "theta0": float(th[0]), "theta1": float(th[1]), "y": float(y)})
    if path is not None:
        write_rows(path, rows)
    return rows


def contour_stream(seed: int, i: int, j: int) -> np.random.Generator:
    return substream(seed, "contour", i, j)


def rmse(estimates, truth) -> np.ndarray:
    err = np.asarray(estimates, dtype=float) - np.asarray(truth, dtype=float)
    return np.sqrt((err**2).mean(axis=0))

