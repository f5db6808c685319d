"""Gaussian-process surrogate of a noisy log-likelihood surface.

The surrogate uses a constant mean ``beta``, an isotropic squared-exponential
covariance ``tau2 * exp(-|u - u'|^2 / eta)`` on inputs mapped to the unit
hypercube, and a nugget ``sigma2`` for Monte Carlo noise. Responses are
centered and scaled before fitting; all hyperparameters live on that
standardized scale and predictions are mapped back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import optimize
from scipy.linalg import solve_triangular

from .models import ThetaBox

LOG_ETA_BOUNDS = (math.log(1e-3), math.log(1e3))
LOG_VAR_BOUNDS = (-12.0, 12.0)
JITTER_START = 1e-10
JITTER_MAX = 1e-4

LogPrior = Callable[[float, float, float], float]


class GpFitError(RuntimeError):
    """Covariance could not be factorized or the fit failed."""


class DegenerateVarianceError(ValueError):
    """Kriging standard deviation is zero, so its gradient is undefined."""


def default_log_prior(tau2: float, eta: float, sigma2: float) -> float:
    """log of the improper prior ``eta / (sigma2 + tau2)``."""
    return math.log(eta) - math.log(sigma2 + tau2)


def mc_nugget_prior(design: "DesignSet", spread: float = math.log(10.0), base: LogPrior | None = None) -> LogPrior:
    """Default prior times a log-normal on the nugget centred at the Monte Carlo error.

    The centre is the mean squared ``mc_se`` in standardized units (clipped to
    the search bounds) and ``spread`` is the log-scale standard deviation. The
    nugget stays a fitted parameter; the factor only keeps the fit away from
    the "all noise" mode that the improper default prior favours when the
    log-likelihood surface has a long lower tail. Without any positive
    ``mc_se`` the base prior is returned unchanged.
    """
    base = base or default_log_prior
    se2 = np.asarray(design.mc_se, dtype=float) ** 2
    if not np.any(se2 > 0):
        return base
    centre = float(np.clip(math.log(se2.mean() / design.y_scale**2), *LOG_VAR_BOUNDS))

    def prior(tau2: float, eta: float, sigma2: float) -> float:
        z = (math.log(max(sigma2, 1e-300)) - centre) / spread
        return base(tau2, eta, sigma2) - 0.5 * z * z

    return prior


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


@dataclass(frozen=True, eq=False)
class DesignSet:
    """Evaluated parameter points with their noisy log-likelihood values."""

    points: np.ndarray
    y: np.ndarray
    box: ThetaBox
    mc_se: np.ndarray
    y_center: float
    y_scale: float

    @classmethod
    def build(cls, points, y, box: ThetaBox, mc_se=None, y_center=None, y_scale=None) -> "DesignSet":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if points.shape[0] != y.size:
            raise ValueError("points and y must have the same length")
        if points.shape[1] != box.p:
            raise ValueError("point dimension does not match the box")
        if not np.all(np.isfinite(y)):
            raise ValueError("y must be finite")
        tol = 1e-9 * box.width
        if np.any(points < box.lower - tol) or np.any(points > box.upper + tol):
            raise ValueError("design points must lie inside the box")
        mc_se = np.zeros(y.size) if mc_se is None else np.asarray(mc_se, dtype=float).reshape(-1)
        if y_center is None:
            y_center = float(np.mean(y))
        if y_scale is None:
            sd = float(np.std(y))
            y_scale = sd if sd > 0 else 1.0
        if not y_scale > 0:
            raise ValueError("y_scale must be positive")
        return cls(points, y, box, mc_se, float(y_center), float(y_scale))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def unit_points(self) -> np.ndarray:
        return self.box.to_unit(self.points)

    @property
    def y_std(self) -> np.ndarray:
        return (self.y - self.y_center) / self.y_scale

    def extend(self, points, y, mc_se=None, renormalize: bool = True) -> "DesignSet":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        mc_se = np.zeros(y.size) if mc_se is None else np.asarray(mc_se, dtype=float).reshape(-1)
        norm = {} if renormalize else {"y_center": self.y_center, "y_scale": self.y_scale}
        return DesignSet.build(
            np.vstack([self.points, points]),
            np.concatenate([self.y, y]),
            self.box,
            np.concatenate([self.mc_se, mc_se]),
            **norm,
        )

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "y": self.y.tolist(),
            "mc_se": self.mc_se.tolist(),
            "box": self.box.to_dict(),
            "y_center": self.y_center,
            "y_scale": self.y_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignSet":
        return cls.build(
            d["points"], d["y"], ThetaBox.from_dict(d["box"]), d.get("mc_se"),
            y_center=d["y_center"], y_scale=d["y_scale"],
        )


@dataclass(frozen=True)
class GpHyper:
    beta: float
    tau2: float
    eta: float
    sigma2: float

    def __post_init__(self):
        vals = (self.beta, self.tau2, self.eta, self.sigma2)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("hyperparameters must be finite")
        if self.tau2 <= 0 or self.eta <= 0 or self.sigma2 < 0:
            raise ValueError("need tau2 > 0, eta > 0, sigma2 >= 0")


def _factor(sq: np.ndarray, tau2: float, eta: float, sigma2: float):
    """Cholesky factor of ``tau2 * R + sigma2 * I`` with escalating jitter."""
    cov = tau2 * np.exp(-sq / eta)
    n = cov.shape[0]
    idx = np.diag_indices(n)
    base = cov[idx] + sigma2
    jitter = JITTER_START * tau2
    while jitter <= JITTER_MAX * tau2 * (1 + 1e-9):
        cov[idx] = base + jitter
        try:
            return np.linalg.cholesky(cov), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise GpFitError("covariance is not positive definite even after maximal jitter")


def _profile(chol: np.ndarray, y: np.ndarray):
    """GLS mean and the quadratic form ``(y - beta)' A^-1 (y - beta)``."""
    rhs = np.column_stack([np.ones_like(y), y])
    s = solve_triangular(chol, rhs, lower=True, check_finite=False)
    a, b = s[:, 0], s[:, 1]
    beta = float(a @ b) / float(a @ a)
    r = b - beta * a
    return beta, float(r @ r)


@dataclass(frozen=True, eq=False)
class GpState:
    """A fitted surrogate: hyperparameters, design and cached factorization."""

    hyper: GpHyper
    design: DesignSet
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0
    log_post: float = float("nan")

    @classmethod
    def from_hyper(cls, design: DesignSet, hyper: GpHyper, log_post: float = float("nan")) -> "GpState":
        chol, jitter = _factor(sq_dists(design.unit_points, design.unit_points), hyper.tau2, hyper.eta, hyper.sigma2)
        return cls._with_chol(design, hyper, chol, jitter, log_post)

    @classmethod
    def _with_chol(cls, design, hyper, chol, jitter, log_post=float("nan")):
        resid = design.y_std - hyper.beta
        tmp = solve_triangular(chol, resid, lower=True, check_finite=False)
        alpha = solve_triangular(chol.T, tmp, lower=False, check_finite=False)
        return cls(hyper, design, chol, alpha, jitter, log_post)

    @property
    def box(self) -> ThetaBox:
        return self.design.box

    @property
    def p(self) -> int:
        return self.design.box.p

    def cross_cov(self, theta) -> np.ndarray:
        u = np.atleast_2d(self.box.to_unit(theta))
        return self.hyper.tau2 * np.exp(-sq_dists(u, self.design.unit_points) / self.hyper.eta)

    def predict(self, theta):
        """Kriging mean and variance (original response scale) at one or many points."""
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        c = self.cross_cov(theta)
        mean = self.hyper.beta + c @ self.alpha
        w = solve_triangular(self.chol, c.T, lower=True, check_finite=False)
        var = self.hyper.tau2 - np.einsum("ij,ij->j", w, w)
        var = np.clip(var, 0.0, self.hyper.tau2)
        mean = self.design.y_center + self.design.y_scale * mean
        var = self.design.y_scale**2 * var
        if single:
            return float(mean[0]), float(var[0])
        return mean, var

    def to_dict(self) -> dict:
        h = self.hyper
        return {
            "hyper": {"beta": h.beta, "tau2": h.tau2, "eta": h.eta, "sigma2": h.sigma2},
            "design": self.design.to_dict(),
            "jitter": self.jitter,
            "log_post": None if math.isnan(self.log_post) else self.log_post,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpState":
        design = DesignSet.from_dict(d["design"])
        lp = d.get("log_post")
        return cls.from_hyper(design, GpHyper(**d["hyper"]), float("nan") if lp is None else lp)


def log_posterior(design: DesignSet, tau2: float, eta: float, sigma2: float, prior: LogPrior | None = None):
    """Log posterior (up to a constant) with ``beta`` profiled out.

    Returns ``(value, beta_hat)``.
    """
    prior = prior or default_log_prior
    y = design.y_std
    chol, _ = _factor(sq_dists(design.unit_points, design.unit_points), tau2, eta, sigma2)
    beta, quad = _profile(chol, y)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    lml = -0.5 * logdet - 0.5 * quad - 0.5 * y.size * math.log(2 * math.pi)
    return lml + prior(tau2, eta, sigma2), beta


def fit_posterior_mode(
    design: DesignSet,
    prior: LogPrior | None = None,
    init: Optional[GpHyper] = None,
    n_starts: int = 5,
    rng: np.random.Generator | None = None,
    fixed_sigma2: float | None = None,
    maxfev: int = 400,
) -> GpState:
    """Posterior-mode hyperparameters by multi-start bounded Nelder-Mead.

    ``tau2``, ``eta`` and ``sigma2`` are searched on the log scale within
    fixed bounds; ``beta`` is the generalized-least-squares mean for each
    covariance. ``fixed_sigma2`` pins the nugget (e.g. 0 for interpolation).
    """
    if design.n < 3:
        raise ValueError("need at least 3 design points")
    u = design.unit_points
    if np.allclose(u, u[0]):
        raise ValueError("design points are all collocated")
    if n_starts < 1:
        raise ValueError("n_starts must be positive")
    prior = prior or default_log_prior
    rng = rng if rng is not None else np.random.default_rng(1729 + design.n)
    sq = sq_dists(u, u)
    y = design.y_std
    n = y.size
    free_sigma = fixed_sigma2 is None
    bounds = [LOG_VAR_BOUNDS, LOG_ETA_BOUNDS] + ([LOG_VAR_BOUNDS] if free_sigma else [])
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    def unpack(z):
        s2 = math.exp(z[2]) if free_sigma else fixed_sigma2
        return math.exp(z[0]), math.exp(z[1]), s2

    def neg_post(z):
        if np.any(z < lo) or np.any(z > hi):
            return np.inf
        tau2, eta, sigma2 = unpack(z)
        try:
            chol, _ = _factor(sq, tau2, eta, sigma2)
        except GpFitError:
            return np.inf
        _, quad = _profile(chol, y)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return 0.5 * logdet + 0.5 * quad + 0.5 * n * math.log(2 * math.pi) - prior(tau2, eta, sigma2)

    starts = []
    if init is not None:
        z0 = [math.log(init.tau2), math.log(init.eta)]
        if free_sigma:
            z0.append(math.log(max(init.sigma2, math.exp(LOG_VAR_BOUNDS[0]))))
        starts.append(np.clip(z0, lo, hi))
    default = [0.0, math.log(0.1)] + ([math.log(1e-2)] if free_sigma else [])
    starts.append(np.array(default))
    # remaining starts spread over a plausible sub-box
    plo = np.array([-3.0, math.log(0.01)] + ([-10.0] if free_sigma else []))
    phi = np.array([3.0, math.log(10.0)] + ([0.0] if free_sigma else []))
    n_rand = max(n_starts - len(starts), 0)
    if n_rand:
        strata = (rng.permuted(np.tile(np.arange(n_rand), (plo.size, 1)), axis=1).T + rng.random((n_rand, plo.size))) / n_rand
        starts.extend(plo + strata * (phi - plo))

    best = None
    for z0 in starts:
        res = optimize.minimize(
            neg_post, z0, method="Nelder-Mead", bounds=bounds,
            options={"maxfev": maxfev, "xatol": 1e-4, "fatol": 1e-7},
        )
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise GpFitError("no start produced a finite posterior")
    tau2, eta, sigma2 = unpack(best.x)
    chol, jitter = _factor(sq, tau2, eta, sigma2)
    beta, _ = _profile(chol, y)
    hyper = GpHyper(beta, tau2, eta, sigma2)
    return GpState._with_chol(design, hyper, chol, jitter, -float(best.fun))


def condition(state: GpState, points, y, mc_se=None) -> GpState:
    """Add observations with hyperparameters and normalization held fixed.

    The Cholesky factor is extended blockwise instead of refactorized.
    """
    design = state.design.extend(points, y, mc_se, renormalize=False)
    h = state.hyper
    u_old = state.design.unit_points
    u_new = design.unit_points[state.design.n :]
    k12 = h.tau2 * np.exp(-sq_dists(u_old, u_new) / h.eta)
    k22 = h.tau2 * np.exp(-sq_dists(u_new, u_new) / h.eta)
    k22[np.diag_indices_from(k22)] += h.sigma2 + state.jitter
    b = solve_triangular(state.chol, k12, lower=True, check_finite=False)
    try:
        c = np.linalg.cholesky(k22 - b.T @ b)
    except np.linalg.LinAlgError:
        return GpState.from_hyper(design, h)
    n0, m = state.design.n, u_new.shape[0]
    chol = np.zeros((n0 + m, n0 + m))
    chol[:n0, :n0] = state.chol
    chol[n0:, :n0] = b.T
    chol[n0:, n0:] = c
    return GpState._with_chol(design, h, chol, state.jitter)


def kriging_mean(state: GpState, theta):
    return state.predict(theta)[0]


def kriging_variance(state: GpState, theta):
    return state.predict(theta)[1]


def kriging_gradients(state: GpState, theta):
    """Gradients of the kriging mean and kriging standard deviation.

    Both are with respect to the search-scale coordinates of ``theta`` and on
    the original response scale. Raises ``DegenerateVarianceError`` where the
    standard deviation vanishes.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    h = state.hyper
    dmean, c, dc = _mean_grad(state, theta)
    w = solve_triangular(state.chol, c, lower=True, check_finite=False)
    v2 = h.tau2 - float(w @ w)
    # variance on the scale of the diagonal jitter is numerically zero
    if v2 <= 10.0 * state.jitter:
        raise DegenerateVarianceError("kriging variance is zero at this point")
    ainv_c = solve_triangular(state.chol.T, w, lower=False, check_finite=False)
    dv2 = -2.0 * (dc.T @ ainv_c)
    dsd = state.design.y_scale * dv2 / (2.0 * math.sqrt(v2))
    return dmean, dsd


def nearest_pd(matrix: np.ndarray, floor: float = 1e-8):
    """Floor eigenvalues at ``floor``. Returns ``(matrix, changed)``."""
    sym = 0.5 * (matrix + matrix.T)
    vals, vecs = np.linalg.eigh(sym)
    if np.all(vals >= floor):
        return sym, False
    vals = np.maximum(vals, floor)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T), True


@dataclass(frozen=True, eq=False)
class SurrogateFisher:
    info: np.ndarray
    projected: bool
    on_boundary: bool


def fisher_from_surrogate(state: GpState, theta_hat, step: float = 1e-4) -> SurrogateFisher:
    """Observed information as minus the Hessian of the kriging mean.

    The Hessian is a central difference of the analytic mean gradient with
    ``step`` measured in unit-cube coordinates.
    """
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
    box = state.box
    on_boundary = bool(np.any(np.isclose(theta_hat, box.lower)) or np.any(np.isclose(theta_hat, box.upper)))
    p = theta_hat.size
    hess = np.empty((p, p))
    for j in range(p):
        h = step * box.width[j]
        e = np.zeros(p)
        e[j] = h
        gp_ = _mean_grad(state, theta_hat + e)[0]
        gm_ = _mean_grad(state, theta_hat - e)[0]
        hess[:, j] = (gp_ - gm_) / (2.0 * h)
    info, projected = nearest_pd(-hess)
    return SurrogateFisher(info, projected, on_boundary)


def _mean_grad(state: GpState, theta):
    """Mean gradient plus the cross-covariance vector and its Jacobian."""
    u = state.box.to_unit(theta)
    U = state.design.unit_points
    c = state.cross_cov(theta)[0]
    # dc_i/dtheta_j = -(2/eta) (u_j - U_ij) c_i / width_j
    dc = (-2.0 / state.hyper.eta) * (u[None, :] - U) * c[:, None] / state.box.width[None, :]
    return state.design.y_scale * (dc.T @ state.alpha), c, dc


def with_hyper(state: GpState, **changes) -> GpState:
    """Rebuild ``state`` with some hyperparameters replaced."""
    return GpState.from_hyper(state.design, replace(state.hyper, **changes))
