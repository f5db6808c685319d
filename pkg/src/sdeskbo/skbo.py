"""Sequential kriging-based optimization of a noisy log-likelihood.

Start from a Latin hypercube design, fit the surrogate, then repeatedly add
the point of maximum expected improvement, evaluate the simulated
log-likelihood there and refit. The estimate is the explored point with the
largest kriging mean.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from .gp import DegenerateVarianceError, DesignSet, GpHyper, GpState, fit_posterior_mode, kriging_gradients, mc_nugget_prior
from .models import ObservedSeries, SdeModel, ThetaBox
from .rng import child_seed, substream
from .smc import SmcConfig, loglik_estimate

log = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# (theta, rng) -> (y, mc_se)
Objective = Callable[[np.ndarray, np.random.Generator], tuple]


@dataclass(frozen=True, eq=False)
class SkboConfig:
    """Settings for one SKBO run. ``None`` sizes resolve against ``box.p``."""

    box: ThetaBox
    n_init: Optional[int] = None
    max_points: Optional[int] = None
    stop_tol: float = 0.01
    stop_patience: int = 5
    acquisition_mode: str = "candidate_grid"
    candidate_pool: Optional[int] = None
    smc: SmcConfig = field(default_factory=SmcConfig)
    seed: int = 0
    gp_starts: int = 5
    polish_top: int = 5
    polish_steps: int = 100
    nugget_prior: str = "mc_se"
    floor_gap: Optional[float] = 1000.0

    def __post_init__(self):
        p = self.box.p
        if self.n_init is None:
            object.__setattr__(self, "n_init", 10 * p)
        if self.max_points is None:
            object.__setattr__(self, "max_points", 25 * p)
        if self.candidate_pool is None:
            object.__setattr__(self, "candidate_pool", 2000 * p)
        if self.n_init < 1 or self.max_points < 1:
            raise ValueError("n_init and max_points must be positive")
        if self.n_init >= self.max_points:
            raise ValueError("n_init must be smaller than max_points")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")
        if self.acquisition_mode not in ("candidate_grid", "local_polish"):
            raise ValueError("acquisition_mode must be candidate_grid or local_polish")
        if self.floor_gap is not None and not self.floor_gap > 0:
            raise ValueError("floor_gap must be positive or None")
        if self.nugget_prior not in ("mc_se", "default"):
            raise ValueError("nugget_prior must be mc_se or default")

    def replace(self, **changes) -> "SkboConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class IterationRecord:
    index: int
    theta: tuple
    y: float
    mc_se: float
    ei: float
    theta_hat: tuple
    eta_hat: float
    hyper: dict
    wall: float


@dataclass(eq=False)
class SkboTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, rec: IterationRecord):
        if self.records and rec.index != self.records[-1].index + 1:
            raise ValueError("trace iterations must be contiguous")
        self.records.append(rec)

    def to_rows(self) -> list[dict]:
        rows = []
        for r in self.records:
            row = {"iteration": r.index, "y": r.y, "mc_se": r.mc_se, "ei": r.ei, "eta_hat": r.eta_hat, "wall": r.wall}
            row.update({f"theta_{j}": v for j, v in enumerate(r.theta)})
            row.update({f"theta_hat_{j}": v for j, v in enumerate(r.theta_hat)})
            row.update(r.hyper)
            rows.append(row)
        return rows


@dataclass(eq=False)
class SkboResult:
    theta_hat: np.ndarray
    eta_at_hat: float
    trace: SkboTrace
    stop_reason: str
    gp: GpState
    n_init: int
    n_failed: int = 0
    raw_y: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def design(self) -> DesignSet:
        return self.gp.design

    @property
    def n_added(self) -> int:
        return self.design.n - self.n_init

    @property
    def n_evaluations(self) -> int:
        return self.design.n


def latin_hypercube(box: ThetaBox, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points, one per equal-width stratum in every coordinate."""
    if n < 1:
        raise ValueError("n must be positive")
    p = box.p
    perms = np.argsort(rng.random((p, n)), axis=1).T
    u = (perms + rng.random((n, p))) / n
    return box.from_unit(u)


def ei_closed_form(d, v):
    """E[max(0, d + v Z)] for Z standard normal; ``max(0, d)`` where ``v == 0``."""
    d = np.asarray(d, dtype=float)
    v = np.asarray(v, dtype=float)
    pos = v > 0
    safe_v = np.where(pos, v, 1.0)
    # a subnormal v overflows z to +-inf, which gives the correct limits
    with np.errstate(over="ignore", invalid="ignore"):
        z = d / safe_v
        ei = np.where(pos, d * ndtr(z) + safe_v * _INV_SQRT_2PI * np.exp(-0.5 * z * z), np.maximum(d, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def floor_values(y, gap: float | None) -> np.ndarray:
    """Raise values more than ``gap`` below the maximum to ``max - gap``.

    The surrogate only has to resolve the likelihood near its maximum;
    values thousands of units lower otherwise dominate the output scale of
    a stationary GP. ``gap=None`` returns ``y`` unchanged.
    """
    y = np.asarray(y, dtype=float)
    if gap is None or y.size == 0:
        return y
    return np.maximum(y, np.max(y) - gap)


def best_explored(state: GpState) -> tuple[int, float]:
    """Index and value of the largest kriging mean over the design points.

    Ties go to the earliest point.
    """
    means, _ = state.predict(state.design.points)
    i = int(np.argmax(means))
    return i, float(means[i])


def expected_improvement(state: GpState, theta, eta_best: float):
    mean, var = state.predict(theta)
    return ei_closed_form(np.asarray(mean) - eta_best, np.sqrt(var))


def ei_gradient(state: GpState, theta, eta_best: float) -> np.ndarray:
    """Gradient of the expected improvement in search coordinates.

    Raises ``DegenerateVarianceError`` where the kriging variance is zero.
    """
    mean, var = state.predict(np.asarray(theta, dtype=float).reshape(-1))
    if var <= 0:
        raise DegenerateVarianceError("kriging variance is zero at this point")
    dmean, dsd = kriging_gradients(state, theta)
    v = math.sqrt(var)
    z = (mean - eta_best) / v
    return dmean * float(ndtr(z)) + dsd * _INV_SQRT_2PI * math.exp(-0.5 * z * z)


def _candidate_pool(state: GpState, box: ThetaBox, size: int, rng: np.random.Generator) -> np.ndarray:
    pts = state.design.points
    i_hat, _ = best_explored(state)
    mids = 0.5 * (pts + pts[i_hat])
    jitter = box.clip(pts + 0.01 * box.width * rng.standard_normal(pts.shape))
    return np.vstack([latin_hypercube(box, size, rng), pts, mids, jitter])


def _polish(state, box, theta, value, eta_best, steps):
    """Projected gradient ascent on EI with backtracking, in unit coordinates."""
    x = np.asarray(theta, dtype=float).copy()
    t = 0.05
    for _ in range(steps):
        try:
            g = ei_gradient(state, x, eta_best) * box.width
        except DegenerateVarianceError:
            break
        gmax = float(np.max(np.abs(g)))
        if not gmax > 0:
            break
        direction = g / gmax
        improved = False
        while t > 1e-12:
            cand = box.clip(x + t * direction * box.width)
            val = float(expected_improvement(state, cand, eta_best))
            if val > value:
                x, value, improved = cand, val, True
                t = min(2.0 * t, 0.25)
                break
            t *= 0.5
        if not improved:
            break
    return x, value


def maximize_ei(state: GpState, box: ThetaBox, config: SkboConfig, rng: np.random.Generator, eta_best=None):
    """Maximize expected improvement over ``box``. Returns ``(theta, ei)``."""
    if eta_best is None:
        _, eta_best = best_explored(state)
    pool = _candidate_pool(state, box, config.candidate_pool, rng)
    ei = np.asarray(expected_improvement(state, pool, eta_best))
    i = int(np.argmax(ei))
    best_x, best_v = pool[i], float(ei[i])
    if config.acquisition_mode == "local_polish":
        order = np.argsort(-ei, kind="stable")[: config.polish_top]
        for j in order:
            x, v = _polish(state, box, pool[j], float(ei[j]), eta_best, config.polish_steps)
            if v > best_v:
                best_x, best_v = x, v
    return np.array(best_x, dtype=float), best_v


# --- checkpoints ----------------------------------------------------------


def save_checkpoint(path, design: DesignSet, hyper: GpHyper, trace: SkboTrace, meta: dict):
    h = hyper
    doc = {
        "format": "sdeskbo-checkpoint/1",
        "design": design.to_dict(),
        "hyper": {"beta": h.beta, "tau2": h.tau2, "eta": h.eta, "sigma2": h.sigma2},
        "trace": [r.__dict__ for r in trace.records],
        "meta": meta,
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1))
    tmp.replace(path)


def load_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "sdeskbo-checkpoint/1":
        raise ValueError(f"{path} is not an SKBO checkpoint")
    doc["design"] = DesignSet.from_dict(doc["design"])
    doc["hyper"] = GpHyper(**doc["hyper"])
    trace = SkboTrace()
    for r in doc["trace"]:
        r = dict(r, theta=tuple(r["theta"]), theta_hat=tuple(r["theta_hat"]))
        trace.append(IterationRecord(**r))
    doc["trace"] = trace
    return doc


def _hyper_dict(h: GpHyper) -> dict:
    return {"beta": h.beta, "tau2": h.tau2, "eta": h.eta, "sigma2": h.sigma2}


def skbo_search(
    objective: Objective,
    config: SkboConfig,
    seed: int | None = None,
    to_natural: Callable | None = None,
    checkpoint: str | Path | None = None,
    resume: bool = False,
) -> SkboResult:
    """Run the sequential search against an arbitrary noisy objective.

    Stops when the natural-scale estimate has moved by less than
    ``stop_tol`` in every coordinate for ``stop_patience`` consecutive
    additions, or when ``max_points`` evaluations have been made. Every
    random draw is keyed on ``seed`` and the evaluation or iteration index,
    so a run resumed from a checkpoint continues exactly as it would have.
    """
    seed = config.seed if seed is None else seed
    to_natural = to_natural or (lambda t: np.asarray(t, dtype=float))
    box = config.box
    n_failed = 0

    def evaluate(i, theta):
        nonlocal n_failed
        try:
            y, se = objective(theta, substream(seed, "eval", i))
            if not np.isfinite(y):
                raise FloatingPointError("non-finite objective")
            return float(y), float(se)
        except Exception as exc:  # noqa: BLE001 - any evaluation failure is recorded, not fatal
            n_failed += 1
            log.warning("evaluation %d at %s failed (%s); recording floored value", i, theta, exc)
            return None, 0.0

    def fit(design, init):
        prior = mc_nugget_prior(design) if config.nugget_prior == "mc_se" else None
        return fit_posterior_mode(design, prior=prior, init=init, n_starts=config.gp_starts, rng=substream(seed, "gp", design.n))

    if resume and checkpoint is not None and Path(checkpoint).exists():
        doc = load_checkpoint(checkpoint)
        design, trace = doc["design"], doc["trace"]
        patience = int(doc["meta"]["patience"])
        n_failed = int(doc["meta"].get("n_failed", 0))
        raw_y = list(doc["meta"].get("raw_y", design.y.tolist()))
        state = GpState.from_hyper(design, doc["hyper"])
        stop_reason = doc["meta"].get("stop_reason")
    else:
        pts = latin_hypercube(box, config.n_init, substream(seed, "lhs"))
        ys, ses = [], []
        for i, th in enumerate(pts):
            y, se = evaluate(i, th)
            ys.append(y)
            ses.append(se)
        ok = [y for y in ys if y is not None]
        if len(ok) < 3:
            raise RuntimeError("too few successful initial evaluations to fit the surrogate")
        lowest = min(ok)
        raw_y = [lowest if y is None else y for y in ys]
        design = DesignSet.build(pts, floor_values(raw_y, config.floor_gap), box, ses)
        state = fit(design, None)
        trace = SkboTrace()
        patience = 0
        stop_reason = None

    i_hat, eta_hat = best_explored(state)
    theta_hat = design.points[i_hat]
    start = time.perf_counter()
    while stop_reason is None:
        if design.n >= config.max_points:
            stop_reason = "budget"
            break
        it = len(trace)
        theta_new, ei = maximize_ei(state, box, config, substream(seed, "acq", it), eta_best=eta_hat)
        y, se = evaluate(design.n, theta_new)
        if y is None:
            y = float(min(raw_y))
        raw_y.append(y)
        design = DesignSet.build(
            np.vstack([design.points, theta_new]), floor_values(raw_y, config.floor_gap), box,
            np.append(design.mc_se, se),
        )
        state = fit(design, state.hyper)
        i_hat, eta_hat = best_explored(state)
        new_hat = design.points[i_hat]
        moved = float(np.max(np.abs(np.asarray(to_natural(new_hat)) - np.asarray(to_natural(theta_hat)))))
        patience = patience + 1 if moved < config.stop_tol else 0
        theta_hat = new_hat
        trace.append(
            IterationRecord(
                index=it, theta=tuple(map(float, theta_new)), y=y, mc_se=se, ei=max(float(ei), 0.0),
                theta_hat=tuple(map(float, theta_hat)), eta_hat=eta_hat, hyper=_hyper_dict(state.hyper),
                wall=time.perf_counter() - start,
            )
        )
        if patience >= config.stop_patience:
            stop_reason = "patience"
        elif design.n >= config.max_points:
            stop_reason = "budget"
        if checkpoint is not None:
            meta = {"patience": patience, "n_failed": n_failed, "stop_reason": stop_reason, "seed": seed,
                    "raw_y": raw_y}
            save_checkpoint(checkpoint, design, state.hyper, trace, meta)

    return SkboResult(
        theta_hat=np.array(theta_hat, dtype=float), eta_at_hat=eta_hat, trace=trace, stop_reason=stop_reason,
        gp=state, n_init=config.n_init, n_failed=n_failed, raw_y=np.array(raw_y),
    )


def loglik_objective(model: SdeModel, series: ObservedSeries, smc: SmcConfig) -> Objective:
    def objective(theta, rng):
        est = loglik_estimate(model, theta, series, smc, rng)
        return est.value, est.mc_se

    return objective


def run_skbo(
    model: SdeModel,
    series: ObservedSeries,
    config: SkboConfig,
    rng: np.random.Generator | None = None,
    checkpoint=None,
    resume: bool = False,
) -> SkboResult:
    """SKBO estimate of the maximum of the simulated log-likelihood.

    The master seed is ``config.seed`` unless ``rng`` is given, in which case
    one is drawn from it.
    """
    if config.box.p != model.p:
        raise ValueError("box dimension does not match the model")
    seed = config.seed if rng is None else child_seed(rng)
    return skbo_search(
        loglik_objective(model, series, config.smc), config, seed=seed,
        to_natural=lambda t: np.asarray(model.natural(t)), checkpoint=checkpoint, resume=resume,
    )
