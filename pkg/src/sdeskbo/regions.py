"""Confidence regions read off the fitted surrogate."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats
from skimage import measure

from .gp import GpState, fisher_from_surrogate
from .models import ObservedSeries, SdeModel
from .rng import child_seed, substream

log = logging.getLogger(__name__)


def chi2_threshold(alpha: float, p: int) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 0.0:
        return math.inf
    return float(stats.chi2.ppf(1.0 - alpha, p))


def box_grid(box, resolution: int) -> list[np.ndarray]:
    return [np.linspace(lo, hi, resolution) for lo, hi in zip(box.lower, box.upper)]


@dataclass(eq=False)
class LrtRegion:
    """Likelihood-ratio region ``2 (eta(theta_hat) - eta(theta)) <= q``."""

    state: GpState = field(repr=False)
    theta_hat: np.ndarray
    eta_hat: float
    threshold: float
    axes: list = field(repr=False)
    mask: np.ndarray = field(repr=False)
    contours: list = field(default_factory=list, repr=False)

    def statistic(self, theta):
        return 2.0 * (self.eta_hat - np.asarray(self.state.predict(theta)[0]))

    def contains(self, theta) -> bool:
        return bool(self.statistic(np.asarray(theta, dtype=float).reshape(-1)) <= self.threshold)


@dataclass(eq=False)
class RaoRegion:
    """Ellipsoid ``(theta - center)' shape (theta - center) <= radius2``."""

    center: np.ndarray
    shape: np.ndarray
    radius2: float
    projected: bool = False

    def distance2(self, theta):
        d = np.atleast_2d(np.asarray(theta, dtype=float)) - self.center
        q = np.einsum("ij,jk,ik->i", d, self.shape, d)
        return q[0] if np.ndim(theta) == 1 else q

    def contains(self, theta):
        out = self.distance2(theta) <= self.radius2
        return bool(out) if np.ndim(out) == 0 else out

    def mask(self, axes) -> np.ndarray:
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        flat = mesh.reshape(-1, len(axes))
        return self.contains(flat).reshape(mesh.shape[:-1])


def _grid_means(state: GpState, axes, chunk: int = 20000) -> np.ndarray:
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    flat = mesh.reshape(-1, len(axes))
    out = np.empty(flat.shape[0])
    for s in range(0, flat.shape[0], chunk):
        out[s : s + chunk] = state.predict(flat[s : s + chunk])[0]
    return out.reshape(mesh.shape[:-1])


def lrt_region(result, alpha: float, grid_resolution: int = 200) -> LrtRegion:
    """Likelihood-ratio confidence region on a regular grid over the box.

    ``result`` is anything with ``gp``, ``theta_hat`` and ``eta_at_hat``
    (an ``SkboResult``). For two parameters the boundary is traced with
    marching squares and returned as polylines in parameter coordinates.
    """
    state = result.gp
    p = state.p
    if p > 3:
        raise ValueError("grid regions support p <= 3; use rao_region for larger p")
    q = chi2_threshold(alpha, p)
    axes = box_grid(state.box, grid_resolution)
    stat = 2.0 * (result.eta_at_hat - _grid_means(state, axes))
    mask = stat <= q
    contours = []
    if p == 2 and math.isfinite(q):
        for c in measure.find_contours(stat, level=q):
            idx = c / (grid_resolution - 1)
            contours.append(state.box.lower + idx * state.box.width)
    return LrtRegion(state, np.asarray(result.theta_hat), float(result.eta_at_hat), q, axes, mask, contours)


def rao_region(result, alpha: float) -> RaoRegion:
    """Ellipsoidal region from the surrogate's observed information at the estimate."""
    fisher = fisher_from_surrogate(result.gp, result.theta_hat)
    if fisher.on_boundary:
        log.warning("estimate lies on the search-box boundary; the Rao region is unreliable")
    if np.any(np.linalg.eigvalsh(fisher.info) <= 0):
        raise np.linalg.LinAlgError("information matrix is not positive definite")
    return RaoRegion(np.asarray(result.theta_hat, dtype=float), fisher.info, chi2_threshold(alpha, result.gp.p), fisher.projected)


def symmetric_difference_fraction(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """Cells in exactly one of the masks, relative to the cells in ``mask_a``."""
    return float(np.sum(mask_a ^ mask_b)) / max(int(np.sum(mask_a)), 1)


@dataclass(frozen=True)
class CoverageResult:
    proportion: float
    se: float
    n_ok: int
    n_failed: int
    hits: tuple


def _coverage_rep(model, theta_true, config, alpha, seed, r, simulate):
    from .skbo import run_skbo

    series = simulate(substream(seed, "coverage-data", r))
    res = run_skbo(model, series, config, rng=substream(seed, "coverage-skbo", r))
    # theta_true need not be on the grid, so test membership directly
    region = LrtRegion(res.gp, res.theta_hat, res.eta_at_hat, chi2_threshold(alpha, model.p), [], np.zeros(0, bool))
    return region.contains(theta_true)


def coverage_experiment(
    model: SdeModel,
    theta_true,
    n_reps: int,
    config,
    alpha: float = 0.05,
    rng: np.random.Generator | None = None,
    n_obs: int = 1000,
    dt: float = 0.1,
    x0: Optional[float] = None,
    n_jobs: int = 1,
    simulate: Optional[Callable[[np.random.Generator], ObservedSeries]] = None,
) -> CoverageResult:
    """Fraction of simulated datasets whose LRT region covers ``theta_true``."""
    if model.simulator is None and simulate is None:
        raise ValueError(f"{model.name} has no simulator")
    if n_reps < 1:
        raise ValueError("n_reps must be positive")
    seed = config.seed if rng is None else child_seed(rng)
    theta_true = np.asarray(theta_true, dtype=float)
    if simulate is None:
        def simulate(g):
            return model.simulator(theta_true, n_obs, dt, g, x0=x0)

    def one(r):
        try:
            return _coverage_rep(model, theta_true, config, alpha, seed, r, simulate)
        except Exception as exc:  # noqa: BLE001 - failures are counted, not fatal
            log.warning("coverage replicate %d failed: %s", r, exc)
            return None

    if n_jobs == 1:
        outcomes = [one(r) for r in range(n_reps)]
    else:
        from joblib import Parallel, delayed

        outcomes = Parallel(n_jobs=n_jobs)(delayed(one)(r) for r in range(n_reps))
    hits = tuple(o for o in outcomes if o is not None)
    n_ok = len(hits)
    c = float(np.mean(hits)) if n_ok else float("nan")
    se = math.sqrt(c * (1 - c) / n_ok) if n_ok else float("nan")
    return CoverageResult(c, se, n_ok, n_reps - n_ok, hits)
