import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdeskbo.gp import (
    LOG_VAR_BOUNDS,
    DegenerateVarianceError,
    DesignSet,
    GpHyper,
    GpState,
    condition,
    default_log_prior,
    fisher_from_surrogate,
    fit_posterior_mode,
    kriging_gradients,
    kriging_mean,
    kriging_variance,
    log_posterior,
    mc_nugget_prior,
    nearest_pd,
    with_hyper,
)
from sdeskbo.models import ThetaBox

UNIT2 = ThetaBox(np.zeros(2), np.ones(2))
BOX = ThetaBox(np.array([-2.0, 0.5]), np.array([3.0, 1.5]))


def _design(n=12, seed=0, box=BOX, noise=0.0, **kw):
    rng = np.random.default_rng(seed)
    pts = box.from_unit(rng.random((n, box.p)))
    u = box.to_unit(pts)
    y = np.sin(3 * u[:, 0]) + np.cos(2 * u[:, 1]) + noise * rng.standard_normal(n)
    return DesignSet.build(pts, y, box, **kw)


def _state(design, beta=0.1, tau2=1.3, eta=0.2, sigma2=1e-3):
    return GpState.from_hyper(design, GpHyper(beta, tau2, eta, sigma2))


# --- design set -------------------------------------------------------------------


def test_design_validation():
    with pytest.raises(ValueError):
        DesignSet.build([[0.1, 0.1]], [1.0, 2.0], UNIT2)
    with pytest.raises(ValueError):
        DesignSet.build([[0.1]], [1.0], UNIT2)
    with pytest.raises(ValueError):
        DesignSet.build([[2.0, 0.1]], [1.0], UNIT2)
    with pytest.raises(ValueError):
        DesignSet.build([[0.1, 0.1]], [np.nan], UNIT2)


def test_design_round_trip_and_extend():
    d = _design(mc_se=np.full(12, 0.3))
    back = DesignSet.from_dict(d.to_dict())
    np.testing.assert_array_equal(back.points, d.points)
    np.testing.assert_array_equal(back.mc_se, d.mc_se)
    assert (back.y_center, back.y_scale) == (d.y_center, d.y_scale)
    e = d.extend([[0.0, 1.0]], [5.0], renormalize=False)
    assert e.n == 13 and e.y_scale == d.y_scale and e.mc_se[-1] == 0.0


def test_constant_data_gives_constant_mean():
    pts = UNIT2.from_unit(np.random.default_rng(1).random((8, 2)))
    d = DesignSet.build(pts, np.full(8, 4.2), UNIT2, y_center=0.0, y_scale=1.0)
    for tau2, eta, s2 in [(1.0, 0.3, 1e-2), (0.2, 2.0, 1e-4)]:
        _, beta = log_posterior(d, tau2, eta, s2)
        assert beta == pytest.approx(4.2, rel=1e-10)


def test_hyper_validation():
    with pytest.raises(ValueError):
        GpHyper(0.0, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        GpHyper(0.0, 1.0, 1.0, -1e-3)
    with pytest.raises(ValueError):
        GpHyper(np.nan, 1.0, 1.0, 0.0)


# --- kriging formulas ------------------------------------------------------------------


def test_interpolation_without_nugget():
    d = _design()
    s = _state(d, sigma2=0.0)
    assert np.max(np.abs(kriging_mean(s, d.points) - d.y)) <= 1e-6 * d.y_scale
    assert np.all(kriging_variance(s, d.points) <= 1e-6 * d.y_scale**2)


def test_single_point_algebra():
    d = DesignSet.build([[0.4, 0.6]], [3.0], UNIT2, y_center=0.0, y_scale=1.0)
    s = GpState.from_hyper(d, GpHyper(1.0, 1.0, 0.5, 1.0))
    m, v = s.predict(np.array([0.4, 0.6]))
    assert m == pytest.approx(1.0 + 2.0 / 2, rel=1e-8)
    assert v == pytest.approx(0.5, rel=1e-8)


def test_far_field_limits():
    d = _design(box=UNIT2)
    s = _state(d, eta=1e-3)
    far = np.array([50.0, -50.0])
    m, v = s.predict(far)
    assert m == pytest.approx(d.y_center + d.y_scale * s.hyper.beta, abs=1e-12)
    assert v == pytest.approx(d.y_scale**2 * s.hyper.tau2, rel=1e-12)
    dm, dsd = kriging_gradients(s, far)
    np.testing.assert_allclose(dm, 0.0, atol=1e-12)
    np.testing.assert_allclose(dsd, 0.0, atol=1e-12)


def test_cholesky_matches_dense_solve():
    d = _design(n=20, seed=3)
    s = _state(d)
    h = s.hyper
    u = d.unit_points
    A = h.tau2 * np.exp(-((u[:, None] - u[None]) ** 2).sum(-1) / h.eta) + (h.sigma2 + s.jitter) * np.eye(d.n)
    q = BOX.from_unit(np.random.default_rng(9).random((15, 2)))
    c = h.tau2 * np.exp(-((BOX.to_unit(q)[:, None] - u[None]) ** 2).sum(-1) / h.eta)
    mean = d.y_center + d.y_scale * (h.beta + c @ np.linalg.solve(A, d.y_std - h.beta))
    var = d.y_scale**2 * (h.tau2 - np.einsum("ij,ji->i", c, np.linalg.solve(A, c.T)))
    m, v = s.predict(q)
    np.testing.assert_allclose(m, mean, rtol=1e-8)
    np.testing.assert_allclose(v, var, rtol=1e-8)


@given(st.integers(0, 10_000))
def test_variance_bounded_and_monotone_under_conditioning(seed):
    rng = np.random.default_rng(seed)
    d = _design(n=6, seed=seed)
    s = _state(d, tau2=rng.uniform(0.2, 3), eta=rng.uniform(0.05, 2), sigma2=rng.uniform(0, 0.1))
    q = BOX.from_unit(rng.random((30, 2)))
    v0 = kriging_variance(s, q)
    assert np.all(v0 >= 0) and np.all(v0 <= s.hyper.tau2 * d.y_scale**2 * (1 + 1e-12))
    s2 = condition(s, BOX.from_unit(rng.random((1, 2))), [rng.normal()])
    assert np.all(kriging_variance(s2, q) <= v0 + 1e-8)


def test_condition_matches_refactorization():
    d = _design(n=10)
    s = _state(d)
    new_pts = BOX.from_unit(np.random.default_rng(4).random((3, 2)))
    inc = condition(s, new_pts, [0.1, -0.2, 0.3])
    full = GpState.from_hyper(d.extend(new_pts, [0.1, -0.2, 0.3], renormalize=False), s.hyper)
    q = BOX.from_unit(np.random.default_rng(5).random((10, 2)))
    for a, b in zip(inc.predict(q), full.predict(q)):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_normalization_equivariance():
    other = ThetaBox(np.array([0.0, -5.0]), np.array([10.0, 5.0]))
    d1 = _design(n=15, box=UNIT2)
    d2 = DesignSet.build(other.from_unit(d1.points), d1.y, other)
    q = np.random.default_rng(2).random((20, 2))
    s1, s2 = _state(d1), _state(d2)
    np.testing.assert_allclose(kriging_mean(s1, q), kriging_mean(s2, other.from_unit(q)), rtol=1e-8, atol=1e-12)
    f1, f2 = fit_posterior_mode(d1), fit_posterior_mode(d2)
    np.testing.assert_allclose(kriging_mean(f1, q), kriging_mean(f2, other.from_unit(q)), rtol=1e-6)


# --- gradients ------------------------------------------------------------------------------


def test_symmetric_center_has_zero_mean_gradient():
    d = DesignSet.build([[0.2, 0.5], [0.8, 0.5]], [1.0, 1.0], UNIT2)
    s = GpState.from_hyper(d, GpHyper(-0.3, 1.0, 0.1, 0.0))
    dm, _ = kriging_gradients(s, np.array([0.5, 0.5]))
    np.testing.assert_allclose(dm, 0.0, atol=1e-14)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    d = _design(n=15, seed=8)
    s = _state(d, sigma2=1e-2)
    worst = 0.0
    for theta in BOX.from_unit(rng.uniform(0.05, 0.95, (20, 2))):
        dm, dsd = kriging_gradients(s, theta)
        fm, fs = np.empty(2), np.empty(2)
        for j in range(2):
            e = np.zeros(2)
            e[j] = 1e-5
            mp, vp = s.predict(theta + e)
            mm, vm = s.predict(theta - e)
            fm[j] = (mp - mm) / 2e-5
            fs[j] = (math.sqrt(vp) - math.sqrt(vm)) / 2e-5
        worst = max(worst, np.linalg.norm(fm - dm) / np.linalg.norm(dm), np.linalg.norm(fs - dsd) / np.linalg.norm(dsd))
    assert worst <= 1e-5


def test_gradient_raises_at_exact_design_point():
    d = _design()
    s = _state(d, sigma2=0.0)
    with pytest.raises(DegenerateVarianceError):
        kriging_gradients(s, d.points[0])


# --- hyperparameter fit -------------------------------------------------------------------------


def test_mode_dominates_random_hyperparameters():
    d = _design(n=25, seed=5, noise=0.05)
    s = fit_posterior_mode(d)
    rng = np.random.default_rng(6)
    for _ in range(100):
        z = rng.uniform([-12, math.log(1e-3), -12], [12, math.log(1e3), 12])
        val, _ = log_posterior(d, *np.exp(z))
        assert s.log_post >= val - 1e-9


def test_fit_reports_posterior_at_mode():
    d = _design(n=25, seed=5, noise=0.05)
    s = fit_posterior_mode(d)
    val, beta = log_posterior(d, s.hyper.tau2, s.hyper.eta, s.hyper.sigma2)
    assert s.log_post == pytest.approx(val, abs=1e-8)
    assert s.hyper.beta == pytest.approx(beta, abs=1e-10)


def test_fit_rejects_small_or_collocated_designs():
    with pytest.raises(ValueError):
        fit_posterior_mode(DesignSet.build([[0.1, 0.1], [0.2, 0.2]], [1, 2], UNIT2))
    with pytest.raises(ValueError):
        fit_posterior_mode(DesignSet.build([[0.1, 0.1]] * 4, [1, 2, 3, 4], UNIT2))


@pytest.mark.xfail(strict=True, reason="tau2 and eta are weakly identified at n=60 with range 0.5; "
                   "even the unpenalized maximum likelihood recovers them in only ~30% of replicates")
def test_recovers_known_gp():
    truth = np.log([1.0, 0.5, 0.1])
    hits = 0
    for r in range(50):
        rng = np.random.default_rng(1000 + r)
        u = rng.random((60, 2))
        sq = ((u[:, None] - u[None]) ** 2).sum(-1)
        cov = np.exp(-sq / 0.5) + 0.1 * np.eye(60)
        y = np.linalg.cholesky(cov) @ rng.standard_normal(60)
        d = DesignSet.build(u, y, UNIT2, y_center=0.0, y_scale=1.0)
        h = fit_posterior_mode(d).hyper
        hits += np.all(np.abs(np.log([h.tau2, h.eta, h.sigma2]) - truth) <= 0.5)
    assert hits >= 40


def test_known_gp_mode_beats_truth_and_recovers_identified_parameters():
    # the optimizer must reach at least the posterior of the generating values,
    # and the well-identified nugget and tau2 / eta ratio come back closely
    truth = np.log([1.0, 0.5, 0.1])
    nugget_hits = ratio_hits = 0
    for r in range(50):
        rng = np.random.default_rng(1000 + r)
        u = rng.random((60, 2))
        sq = ((u[:, None] - u[None]) ** 2).sum(-1)
        y = np.linalg.cholesky(np.exp(-sq / 0.5) + 0.1 * np.eye(60)) @ rng.standard_normal(60)
        d = DesignSet.build(u, y, UNIT2, y_center=0.0, y_scale=1.0)
        s = fit_posterior_mode(d)
        assert s.log_post >= log_posterior(d, 1.0, 0.5, 0.1)[0] - 1e-6
        h = s.hyper
        nugget_hits += abs(math.log(h.sigma2) - truth[2]) <= 0.5
        ratio_hits += abs(math.log(h.tau2 / h.eta) - (truth[0] - truth[1])) <= 0.5
    assert nugget_hits >= 40
    assert ratio_hits >= 25


def test_mc_nugget_prior_centre():
    d = _design(mc_se=np.full(12, 0.2))
    prior = mc_nugget_prior(d)
    centre = (0.2 / d.y_scale) ** 2
    assert prior(1.0, 0.5, centre) - default_log_prior(1.0, 0.5, centre) == pytest.approx(0.0, abs=1e-12)
    assert prior(1.0, 0.5, centre * 10) - default_log_prior(1.0, 0.5, centre * 10) == pytest.approx(-0.5, rel=1e-9)
    assert mc_nugget_prior(_design()) is default_log_prior


def test_mc_nugget_prior_centre_is_clipped():
    d = _design(mc_se=np.full(12, 1e-9))
    prior = mc_nugget_prior(d)
    lo = math.exp(LOG_VAR_BOUNDS[0])
    assert prior(1.0, 0.5, lo) == pytest.approx(default_log_prior(1.0, 0.5, lo), abs=1e-12)


def test_state_round_trip():
    s = fit_posterior_mode(_design(n=15))
    back = GpState.from_dict(s.to_dict())
    q = BOX.from_unit(np.random.default_rng(0).random((5, 2)))
    np.testing.assert_allclose(back.predict(q)[0], s.predict(q)[0], rtol=1e-12)
    assert with_hyper(s, sigma2=0.5).hyper.sigma2 == 0.5


# --- curvature ----------------------------------------------------------------------------------


def test_quadratic_hessian_recovered():
    box = ThetaBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    g = np.linspace(-1, 1, 9)
    pts = np.array([[a, b] for a in g for b in g])
    d = DesignSet.build(pts, -(pts**2).sum(1), box)
    s = fit_posterior_mode(d, fixed_sigma2=0.0)
    fi = fisher_from_surrogate(s, np.zeros(2))
    np.testing.assert_allclose(fi.info, 2.0 * np.eye(2), atol=0.1)
    assert np.array_equal(fi.info, fi.info.T)
    assert not fi.projected and not fi.on_boundary


def test_nearest_pd():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    out, changed = nearest_pd(a)
    assert not changed and np.array_equal(out, a)
    out, changed = nearest_pd(np.array([[1.0, 0.0], [0.0, -3.0]]))
    assert changed and np.all(np.linalg.eigvalsh(out) >= 1e-8 * (1 - 1e-9))
