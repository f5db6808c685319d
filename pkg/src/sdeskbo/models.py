"""Scalar SDE models dX = mu(X; theta) dt + sigma(X; theta) dW.

Parameters are handled on two scales. The *search* scale is the
unconstrained vector the optimizer moves over; the *natural* scale is the one
the drift and diffusion are written in. For OU and GBM the two coincide. For
GCIR and the generalized GBM the search vector carries ``log(gamma)`` and
``logit(psi)`` in place of ``gamma`` and ``psi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, special, stats

POSITIVITY_EPS = 1e-8


class SimulationError(RuntimeError):
    """Raised when a simulated path produces a non-finite drift or diffusion."""


class DomainError(ValueError):
    """Raised when parameters or data fall outside a model's domain."""


@dataclass(frozen=True, eq=False)
class ThetaBox:
    """Compact rectangular search region on the search scale."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("box bounds must have equal length")
        if not np.all(lo < hi):
            raise ValueError("box requires lower < upper in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def p(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def to_unit(self, theta) -> np.ndarray:
        return (np.asarray(theta, dtype=float) - self.lower) / self.width

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.width

    def contains(self, theta, tol: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower - tol) and np.all(theta <= self.upper + tol))

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ThetaBox":
        return cls(np.asarray(d["lower"]), np.asarray(d["upper"]))


@dataclass(frozen=True, eq=False)
class ObservedSeries:
    """Observation times and values of one discretely sampled path."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        x = np.asarray(self.values, dtype=float).reshape(-1)
        if t.shape != x.shape:
            raise ValueError("times and values must have equal length")
        if t.size < 2:
            raise ValueError("a series needs at least one transition (N >= 1)")
        if not np.all(np.diff(t) > 0):
            raise ValueError("observation times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise ValueError("series contains non-finite entries")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", x)

    @property
    def n_transitions(self) -> int:
        return self.values.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @classmethod
    def regular(cls, values, dt: float, t0: float = 0.0) -> "ObservedSeries":
        values = np.asarray(values, dtype=float)
        return cls(t0 + dt * np.arange(values.size), values)

    def uniform_dt(self, rtol: float = 1e-8) -> float:
        d = self.dt
        if not np.allclose(d, d[0], rtol=rtol, atol=0.0):
            raise ValueError("series is not uniformly spaced")
        return float(d[0])


def _identity(theta):
    return tuple(float(v) for v in np.asarray(theta, dtype=float).reshape(-1))


@dataclass(frozen=True, eq=False)
class SdeModel:
    """A parametric scalar diffusion.

    ``drift`` and ``diffusion`` take ``(x, natural_params)`` and must broadcast
    over array ``x``. ``to_natural``/``from_natural`` map between the search
    and natural scales. ``exact_logpdf(x_to, x_from, dt, natural)`` is the
    closed-form log transition density when one exists. ``simulator`` draws a
    synthetic series ``(theta, n_obs, dt, rng, x0) -> ObservedSeries``.
    """

    name: str
    param_names: tuple[str, ...]
    drift: Callable[[np.ndarray, tuple], np.ndarray]
    diffusion: Callable[[np.ndarray, tuple], np.ndarray]
    default_box: ThetaBox
    to_natural: Callable[[np.ndarray], tuple] = _identity
    from_natural: Callable[[Sequence[float]], np.ndarray] = field(
        default=lambda nat: np.asarray(nat, dtype=float)
    )
    natural_names: Optional[tuple[str, ...]] = None
    exact_logpdf: Optional[Callable] = None
    stationary: Optional[Callable[[tuple], tuple[float, float]]] = None
    state_lower_bound: Optional[float] = None
    simulator: Optional[Callable] = None

    @property
    def p(self) -> int:
        return len(self.param_names)

    def natural(self, theta) -> tuple:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.p:
            raise ValueError(f"{self.name} expects {self.p} parameters, got {theta.size}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameter vector must be finite")
        return self.to_natural(theta)

    def clamp(self, x: np.ndarray) -> np.ndarray:
        if self.state_lower_bound is None:
            return x
        floor = self.state_lower_bound + POSITIVITY_EPS
        return np.maximum(x, floor)

    def exact_loglik(self, theta, series: ObservedSeries) -> float:
        if self.exact_logpdf is None:
            raise NotImplementedError(f"{self.name} has no closed-form transition density")
        nat = self.natural(theta)
        x = series.values
        terms = self.exact_logpdf(x[1:], x[:-1], series.dt, nat)
        return math.fsum(terms)


def euler_simulate(
    model: SdeModel,
    theta,
    x0,
    dt: float,
    n_steps: int,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Euler-Maruyama path(s) started at ``x0``.

    ``x0`` may be a scalar (returns shape ``(n_steps + 1,)``) or an array of
    starting values for independent paths (returns ``(n_steps + 1, n_paths)``).
    ``noise`` overrides the standard normal increments when given.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    nat = model.natural(theta)
    scalar = np.ndim(x0) == 0
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = rng.standard_normal((n_steps, x.size))
    else:
        noise = np.asarray(noise, dtype=float).reshape(n_steps, -1)
    path = np.empty((n_steps + 1, x.size))
    path[0] = x
    sqdt = math.sqrt(dt)
    for k in range(n_steps):
        mu = model.drift(x, nat)
        sig = model.diffusion(x, nat)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sig))):
            raise SimulationError(f"non-finite drift or diffusion at step {k}")
        x = model.clamp(x + mu * dt + sig * sqdt * noise[k])
        path[k + 1] = x
    return path[:, 0] if scalar else path


# --- Ornstein-Uhlenbeck -----------------------------------------------------


def ou_exact_transition(theta0: float, theta1: float, x0, delta) -> tuple:
    """Mean and variance of X_delta | X_0 = x0 for dX = (theta0 + theta1 X) dt + dW."""
    if theta1 >= 0:
        raise DomainError("OU transition requires theta1 < 0")
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise DomainError("delta must be positive")
    decay = np.exp(theta1 * delta)
    level = theta0 / -theta1
    mean = np.asarray(x0, dtype=float) * decay + level * (1.0 - decay)
    # -expm1 keeps precision for small theta1 * delta
    var = -np.expm1(2.0 * theta1 * delta) / (-2.0 * theta1)
    if mean.ndim == 0 and var.ndim == 0:
        return float(mean), float(var)
    return mean, var


def ou_stationary(theta0: float, theta1: float) -> tuple[float, float]:
    """Mean and variance of the Gaussian stationary law of the OU model."""
    if theta1 >= 0:
        raise DomainError("OU has no stationary law unless theta1 < 0")
    return theta0 / -theta1, 1.0 / (-2.0 * theta1)


def _ou_logpdf(x_to, x_from, dt, nat):
    theta0, theta1 = nat
    if theta1 >= 0:
        return np.full(np.shape(x_to), -np.inf)
    m, v = ou_exact_transition(theta0, theta1, x_from, dt)
    return stats.norm.logpdf(x_to, loc=m, scale=np.sqrt(v))


def ou_loglik(theta, series: ObservedSeries) -> float:
    """Exact OU log-likelihood conditional on the first observation."""
    return OU.exact_loglik(theta, series)


def ou_exact_mle(series: ObservedSeries, theta1_bounds=(-200.0, -1e-6), xtol=1e-10):
    """Exact OU maximum-likelihood estimate for a uniformly spaced series.

    For fixed ``theta1`` the conditional mean is affine in ``theta0`` with a
    common variance, so ``theta0`` is profiled out in closed form and the
    profile likelihood is maximized over ``theta1`` by bounded Brent search.

    Returns ``(theta_hat, loglik)``.
    """
    dt = series.uniform_dt()
    x_prev, x_next = series.values[:-1], series.values[1:]
    n = x_next.size

    def profile(theta1):
        b = math.exp(theta1 * dt)
        a = float(np.mean(x_next - b * x_prev))
        v = -math.expm1(2.0 * theta1 * dt) / (-2.0 * theta1)
        resid = x_next - b * x_prev - a
        ll = -0.5 * n * math.log(2 * math.pi * v) - 0.5 * float(resid @ resid) / v
        return ll, a, b

    # coarse scan guards the bounded search against a poor bracket
    grid = -np.geomspace(-theta1_bounds[1], -theta1_bounds[0], 400)
    vals = np.array([profile(t)[0] for t in grid])
    i = int(np.argmax(vals))
    lo = grid[min(i + 1, grid.size - 1)] if i + 1 < grid.size else theta1_bounds[0]
    hi = grid[max(i - 1, 0)] if i > 0 else theta1_bounds[1]
    lo, hi = min(lo, hi), max(lo, hi)
    res = optimize.minimize_scalar(
        lambda t: -profile(t)[0], bounds=(lo, hi), method="bounded", options={"xatol": xtol}
    )
    theta1 = float(res.x)
    ll, a, b = profile(theta1)
    theta0 = a * (-theta1) / (1.0 - b)
    return np.array([theta0, theta1]), ll


def simulate_ou(theta, n_obs: int, dt: float, rng: np.random.Generator, x0=None) -> ObservedSeries:
    """Stationary start (unless ``x0`` given) followed by exact conditional draws."""
    theta0, theta1 = (float(v) for v in theta)
    if x0 is None:
        m, v = ou_stationary(theta0, theta1)
        x0 = m + math.sqrt(v) * rng.standard_normal()
    decay = math.exp(theta1 * dt)
    level = theta0 / -theta1
    sd = math.sqrt(-math.expm1(2.0 * theta1 * dt) / (-2.0 * theta1))
    z = rng.standard_normal(n_obs)
    x = np.empty(n_obs + 1)
    x[0] = x0
    for i in range(n_obs):
        x[i + 1] = x[i] * decay + level * (1.0 - decay) + sd * z[i]
    return ObservedSeries.regular(x, dt)


# --- GBM ----------------------------------------------------------------------


@dataclass(frozen=True)
class GbmFit:
    theta0: float
    gamma: float
    loglik: float
    degenerate: bool = False


def _gbm_logpdf(x_to, x_from, dt, nat):
    theta0, gamma = nat
    x_to = np.asarray(x_to, dtype=float)
    r = np.log(x_to / x_from)
    dt = np.asarray(dt, dtype=float)
    return stats.norm.logpdf(r, (theta0 - 0.5 * gamma**2) * dt, gamma * np.sqrt(dt)) - np.log(x_to)


def gbm_exact_mle(series: ObservedSeries, dt: float | None = None) -> GbmFit:
    """Closed-form GBM maximum-likelihood fit.

    The log-likelihood is returned on the price scale: the Gaussian
    log-return likelihood minus ``sum(log X_i)`` over the non-initial
    observations, so it is comparable with simulated likelihoods of models
    written directly in the price.
    """
    x = series.values
    if np.any(x <= 0):
        raise DomainError("GBM requires strictly positive observations")
    if dt is None:
        dt = series.uniform_dt()
    r = np.diff(np.log(x))
    n = r.size
    rbar = float(np.mean(r))
    gamma2 = float(np.mean((r - rbar) ** 2)) / dt
    theta0 = rbar / dt + 0.5 * gamma2
    jac = math.fsum(np.log(x[1:]))
    # log returns equal up to rounding: zero variance, unbounded likelihood
    if math.sqrt(gamma2 * dt) <= 1e-10 * max(float(np.max(np.abs(r))), 1e-300):
        return GbmFit(rbar / dt, 0.0, math.inf, degenerate=True)
    s2 = gamma2 * dt
    ll = -0.5 * n * math.log(2 * math.pi * s2) - 0.5 * n - jac
    return GbmFit(theta0, math.sqrt(gamma2), ll)


# --- model catalog ------------------------------------------------------------


def _ou_drift(x, nat):
    return nat[0] + nat[1] * x


def _unit(x, nat):
    return np.ones_like(x, dtype=float)


def _power_diffusion(x, nat):
    # gamma * x**psi; x <= 0 yields nan and is handled by the clamp policy
    with np.errstate(invalid="ignore"):
        return nat[2] * np.power(x, nat[3])


def _gcir_to_natural(theta):
    t = np.asarray(theta, dtype=float)
    return (float(t[0]), float(t[1]), math.exp(t[2]), float(special.expit(t[3])))


def _gcir_from_natural(nat):
    t0, t1, gamma, psi = (float(v) for v in nat)
    return np.array([t0, t1, math.log(gamma), float(special.logit(psi))])


def _gbm_drift(x, nat):
    return nat[0] * x


def _gbm_diffusion(x, nat):
    return nat[1] * x


def _gengbm_diffusion(x, nat):
    with np.errstate(invalid="ignore"):
        return nat[1] * np.power(x, nat[2])


def _gengbm_to_natural(theta):
    t = np.asarray(theta, dtype=float)
    return (float(t[0]), math.exp(t[1]), float(special.expit(t[2])))


def _gengbm_from_natural(nat):
    t0, gamma, psi = (float(v) for v in nat)
    return np.array([t0, math.log(gamma), float(special.logit(psi))])


def _euler_subsampled(name: str, fine_steps_per_obs: int):
    """Simulator on a grid ``fine_steps_per_obs`` times finer than the sampling interval."""

    def simulate(theta, n_obs, dt, rng, x0=None):
        if x0 is None:
            raise ValueError(f"{name} simulation needs an explicit x0")
        fine_dt = dt / fine_steps_per_obs
        path = euler_simulate(get_model(name), theta, float(x0), fine_dt, n_obs * fine_steps_per_obs, rng)
        return ObservedSeries.regular(path[::fine_steps_per_obs], dt)

    return simulate


def _build_zoo() -> dict[str, SdeModel]:
    ou = SdeModel(
        name="ou",
        param_names=("theta0", "theta1"),
        drift=_ou_drift,
        diffusion=_unit,
        default_box=ThetaBox(np.array([0.0, -6.0]), np.array([4.0, -0.5])),
        exact_logpdf=_ou_logpdf,
        stationary=lambda nat: ou_stationary(*nat),
        simulator=simulate_ou,
    )
    gcir = SdeModel(
        name="gcir",
        param_names=("theta0", "theta1", "theta2", "theta3"),
        natural_names=("theta0", "theta1", "gamma", "psi"),
        drift=_ou_drift,
        diffusion=_power_diffusion,
        default_box=ThetaBox(np.array([-1.0, -2.0, -2.0, -3.0]), np.array([2.0, 1.0, 2.0, 3.0])),
        to_natural=_gcir_to_natural,
        from_natural=_gcir_from_natural,
        state_lower_bound=0.0,
        simulator=_euler_subsampled("gcir", 100),
    )
    gbm = SdeModel(
        name="gbm",
        param_names=("theta0", "gamma"),
        drift=_gbm_drift,
        diffusion=_gbm_diffusion,
        default_box=ThetaBox(np.array([-1.0, 0.01]), np.array([1.0, 2.0])),
        exact_logpdf=_gbm_logpdf,
        state_lower_bound=0.0,
        simulator=simulate_gbm,
    )
    gen_gbm = SdeModel(
        name="gen_gbm",
        param_names=("theta0", "theta2", "theta3"),
        natural_names=("theta0", "gamma", "psi"),
        drift=_gbm_drift,
        diffusion=_gengbm_diffusion,
        default_box=ThetaBox(np.array([-1.0, -3.0, -3.0]), np.array([1.0, 2.0, 5.0])),
        to_natural=_gengbm_to_natural,
        from_natural=_gengbm_from_natural,
        state_lower_bound=0.0,
        simulator=_euler_subsampled("gen_gbm", 20),
    )
    return {m.name: m for m in (ou, gcir, gbm, gen_gbm)}


def simulate_gbm(theta, n_obs: int, dt: float, rng: np.random.Generator, x0=None) -> ObservedSeries:
    theta0, gamma = (float(v) for v in theta)
    if x0 is None:
        raise ValueError("GBM simulation needs an explicit x0")
    r = (theta0 - 0.5 * gamma**2) * dt + gamma * math.sqrt(dt) * rng.standard_normal(n_obs)
    x = float(x0) * np.exp(np.concatenate([[0.0], np.cumsum(r)]))
    return ObservedSeries.regular(x, dt)


_ZOO: dict[str, SdeModel] | None = None


def model_zoo() -> dict[str, SdeModel]:
    """Catalog of the OU, GCIR, GBM and generalized GBM models."""
    global _ZOO
    if _ZOO is None:
        _ZOO = _build_zoo()
    return dict(_ZOO)


def get_model(name: str) -> SdeModel:
    try:
        return model_zoo()[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(model_zoo())}") from None


OU = model_zoo()["ou"]
