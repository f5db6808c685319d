"""Importance-sampling estimates of discretized transition densities.

Each observation interval of length ``dt`` is split into ``K`` equal
subintervals. The ``K - 1`` interior states are drawn from an importance
density ``q`` and the product of Euler one-step densities along the imputed
path is divided by ``q``. Averaging ``M`` such weights estimates the K-step
discretized density; the log-likelihood is the sum of log estimates over
intervals. Weights are handled in log space throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .models import DomainError, ObservedSeries, SdeModel
from .rng import substream

SAMPLERS = ("pedersen", "brownian_bridge", "modified_brownian_bridge")
LOG_DENSITY_FLOOR = -745.0
_LOG2PI = math.log(2.0 * math.pi)
_CHUNK = 1 << 17


@dataclass(frozen=True)
class SmcConfig:
    """Imputation settings. ``M`` defaults to ``K**2``."""

    K: int = 10
    M: int | None = None
    sampler: str = "modified_brownian_bridge"
    seed: int = 0

    def __post_init__(self):
        if self.M is None:
            object.__setattr__(self, "M", self.K**2)
        if self.K < 1 or self.M < 1:
            raise ValueError("K and M must be at least 1")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")


@dataclass(frozen=True)
class TransitionEstimate:
    p_hat: float
    se: float
    log_p: float
    zero: bool = False


@dataclass(frozen=True, eq=False)
class LoglikEstimate:
    value: float
    mc_se: float
    per_transition: np.ndarray = field(repr=False)
    n_floored: int = 0

    @property
    def flagged(self) -> bool:
        return self.n_floored > 0


@dataclass(frozen=True, eq=False)
class BridgeSample:
    """Imputed interior states and the log importance density of each draw."""

    points: np.ndarray
    log_q: np.ndarray


def _log_normal(x, mean, var):
    with np.errstate(divide="ignore", invalid="ignore"):
        return -0.5 * (_LOG2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


def euler_density(model: SdeModel, theta, x_from, x_to, dt: float):
    """One-step Euler (Gaussian) approximation of the transition density."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    nat = model.natural(theta)
    x_from = np.asarray(x_from, dtype=float)
    mu = model.drift(x_from, nat)
    sig = model.diffusion(x_from, nat)
    if np.any(~(sig > 0)):
        raise DomainError("diffusion must be positive at x_from")
    dens = np.exp(_log_normal(np.asarray(x_to, dtype=float), x_from + mu * dt, sig**2 * dt))
    return float(dens) if np.ndim(dens) == 0 else dens


def _impute(model, nat, x0, x1, dt, K, M, sampler, rng, noise=None, keep=False):
    """Draw imputed paths for many intervals at once.

    ``x0``, ``x1`` and ``dt`` have shape ``(n,)``; ``noise`` if given has
    shape ``(K - 1, n, M)``. Returns ``(log_w, log_q, path)`` with the log
    importance weights and log proposal densities of shape ``(n, M)`` and, if
    ``keep``, the interior states with shape ``(K - 1, n, M)``.
    """
    x0 = np.asarray(x0, dtype=float)[:, None]
    x1 = np.asarray(x1, dtype=float)[:, None]
    delta = np.asarray(dt, dtype=float)[:, None] / K
    n = x0.shape[0]
    x = np.broadcast_to(x0, (n, M)).copy()
    log_num = np.zeros((n, M))
    log_q = np.zeros((n, M))
    path = np.empty((K - 1, n, M)) if keep else None
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        for k in range(1, K):
            mu = model.drift(x, nat)
            var = model.diffusion(x, nat) ** 2 * delta
            z = noise[k - 1] if noise is not None else rng.standard_normal((n, M))
            if sampler == "pedersen":
                mean, qvar = x + mu * delta, var
            else:
                mean = x + (x1 - x) / (K - k + 1)
                qvar = var * ((K - k) / (K - k + 1)) if sampler == "modified_brownian_bridge" else var
            x_new = mean + np.sqrt(qvar) * z
            log_q += -0.5 * (_LOG2PI + np.log(qvar)) - 0.5 * z * z
            clamped = model.clamp(x_new)
            # the target has no density outside the state space, so a draw the
            # clamp had to move carries zero weight; the clamped value only
            # keeps the remaining arithmetic finite
            log_num += np.where(clamped == x_new, _log_normal(clamped, x + mu * delta, var), -np.inf)
            x_new = clamped
            x = x_new
            if keep:
                path[k - 1] = x
        mu = model.drift(x, nat)
        var = model.diffusion(x, nat) ** 2 * delta
        log_num += _log_normal(x1, x + mu * delta, var)
    log_w = log_num - log_q
    log_w[~np.isfinite(log_w)] = -np.inf
    return log_w, log_q, path


def _summarize(log_w: np.ndarray):
    """Per-row log mean weight and relative standard error of the mean."""
    M = log_w.shape[1]
    log_p = logsumexp(log_w, axis=1) - math.log(M)
    mx = np.max(log_w, axis=1, keepdims=True)
    ok = np.isfinite(mx[:, 0])
    rel = np.zeros(log_w.shape[0])
    if M > 1 and np.any(ok):
        w = np.exp(log_w[ok] - mx[ok])
        wbar = w.mean(axis=1)
        rel[ok] = w.std(axis=1, ddof=1) / (wbar * math.sqrt(M))
    log_p[~ok] = -np.inf
    return log_p, rel


def _check_bridge_args(K):
    if K < 2:
        raise ValueError("imputation needs K >= 2")


def _sample(model, theta, x0, x1, delta, K, rng, size, noise, sampler):
    _check_bridge_args(K)
    nat = model.natural(theta)
    M = 1 if size is None else int(size)
    if noise is not None:
        noise = np.asarray(noise, dtype=float).reshape(M, K - 1).T[:, None, :]
    _, log_q, path = _impute(
        model, nat, [x0], [x1], [delta], K, M, sampler, rng, noise=noise, keep=True
    )
    points = path[:, 0, :].T
    log_q = log_q[0]
    if size is None:
        return BridgeSample(points[0], float(log_q[0]))
    return BridgeSample(points, log_q)


def sample_bridge_modified(model, theta, x0, x_delta, delta, K, rng=None, size=None, noise=None):
    """Modified Brownian bridge draws of the ``K - 1`` interior states.

    Each step moves a fraction ``1 / (K - k + 1)`` of the remaining distance
    to ``x_delta`` with variance shrunk by ``(K - k) / (K - k + 1)``.
    """
    return _sample(model, theta, x0, x_delta, delta, K, rng, size, noise, "modified_brownian_bridge")


def sample_bridge_euler(model, theta, x0, x_delta, delta, K, rng=None, size=None, noise=None):
    """Euler discretization of the Brownian-bridge SDE pinned at ``x_delta``."""
    return _sample(model, theta, x0, x_delta, delta, K, rng, size, noise, "brownian_bridge")


def sample_pedersen(model, theta, x0, delta, K, rng=None, size=None, noise=None):
    """Forward Euler draws that ignore the right endpoint."""
    # the right endpoint only enters the weight, not the draws
    return _sample(model, theta, x0, 0.0, delta, K, rng, size, noise, "pedersen")


def _euler_log_density(model, nat, x0, x1, dt):
    x0 = np.asarray(x0, dtype=float)
    mu = model.drift(x0, nat)
    var = model.diffusion(x0, nat) ** 2 * dt
    return _log_normal(np.asarray(x1, dtype=float), x0 + mu * dt, var)


def _log_transitions(model, theta, x0, x1, dt, config: SmcConfig, rng):
    nat = model.natural(theta)
    x0, x1, dt = (np.asarray(a, dtype=float).reshape(-1) for a in (x0, x1, dt))
    if config.K == 1:
        with np.errstate(invalid="ignore", divide="ignore"):
            log_p = _euler_log_density(model, nat, x0, x1, dt)
        log_p = np.where(np.isfinite(log_p), log_p, -np.inf)
        return log_p, np.zeros_like(log_p)
    rows = max(1, _CHUNK // config.M)
    log_p = np.empty(x0.size)
    rel = np.empty(x0.size)
    for start in range(0, x0.size, rows):
        sl = slice(start, start + rows)
        log_w, _, _ = _impute(model, nat, x0[sl], x1[sl], dt[sl], config.K, config.M, config.sampler, rng)
        log_p[sl], rel[sl] = _summarize(log_w)
    return log_p, rel


def transition_estimate(model, theta, x0, x_delta, delta, config: SmcConfig, rng=None) -> TransitionEstimate:
    """Monte Carlo estimate of the K-step discretized transition density."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if rng is None:
        rng = substream(config.seed)
    log_p, rel = _log_transitions(model, theta, [x0], [x_delta], [delta], config, rng)
    lp = float(log_p[0])
    if not np.isfinite(lp):
        return TransitionEstimate(0.0, 0.0, -np.inf, zero=True)
    p = math.exp(lp)
    return TransitionEstimate(p, p * float(rel[0]), lp)


def loglik_estimate(model: SdeModel, theta, series: ObservedSeries, config: SmcConfig, rng=None) -> LoglikEstimate:
    """Sum of log discretized-density estimates over all observation intervals.

    Intervals whose estimate is exactly zero contribute ``LOG_DENSITY_FLOOR``
    and are counted in ``n_floored``. ``mc_se`` is the delta-method standard
    error ``sqrt(sum((se_i / p_i) ** 2))`` over the non-floored intervals.
    """
    if rng is None:
        rng = substream(config.seed)
    x = series.values
    log_p, rel = _log_transitions(model, theta, x[:-1], x[1:], series.dt, config, rng)
    bad = ~np.isfinite(log_p)
    log_p[bad] = LOG_DENSITY_FLOOR
    rel[bad] = 0.0
    return LoglikEstimate(
        value=math.fsum(log_p),
        mc_se=math.sqrt(math.fsum(rel * rel)),
        per_transition=log_p,
        n_floored=int(bad.sum()),
    )
