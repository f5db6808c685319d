from types import SimpleNamespace

import numpy as np
import pytest

from sdeskbo.gp import DesignSet, fit_posterior_mode
from sdeskbo.models import ThetaBox, get_model
from sdeskbo.regions import (
    RaoRegion,
    box_grid,
    chi2_threshold,
    coverage_experiment,
    lrt_region,
    rao_region,
    symmetric_difference_fraction,
)
from sdeskbo.skbo import SkboConfig
from sdeskbo.smc import SmcConfig

BOX = ThetaBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
C = np.array([0.1, -0.2])
A = np.array([[40.0, 6.0], [6.0, 15.0]])


class QuadraticSurrogate:
    """Exact quadratic kriging-mean stand-in, -(theta - c)' A (theta - c)."""

    def __init__(self, box, c, a):
        self.box, self.c, self.a = box, c, a

    @property
    def p(self):
        return self.box.p

    def predict(self, theta):
        theta = np.asarray(theta, dtype=float)
        d = np.atleast_2d(theta) - self.c
        m = -np.einsum("ij,jk,ik->i", d, self.a, d)
        return (float(m[0]), 0.0) if theta.ndim == 1 else (m, np.zeros_like(m))


def _quad_result():
    return SimpleNamespace(gp=QuadraticSurrogate(BOX, C, A), theta_hat=C, eta_at_hat=0.0)


def _fitted_quadratic_result():
    g = np.linspace(-1, 1, 11)
    pts = np.array([[a, b] for a in g for b in g])
    d = pts - C
    y = -np.einsum("ij,jk,ik->i", d, A, d)
    state = fit_posterior_mode(DesignSet.build(pts, y, BOX), fixed_sigma2=0.0)
    return SimpleNamespace(gp=state, theta_hat=C, eta_at_hat=float(state.predict(C)[0]))


def test_chi2_threshold():
    assert chi2_threshold(0.05, 2) == pytest.approx(5.991464547, rel=1e-9)
    assert chi2_threshold(0.0, 2) == np.inf
    with pytest.raises(ValueError):
        chi2_threshold(1.5, 2)


def test_lrt_matches_analytic_ellipse():
    reg = lrt_region(_quad_result(), 0.05, grid_resolution=200)
    mesh = np.stack(np.meshgrid(*box_grid(BOX, 200), indexing="ij"), -1).reshape(-1, 2) - C
    inside = (np.einsum("ij,jk,ik->i", mesh, A, mesh) <= chi2_threshold(0.05, 2) / 2).reshape(200, 200)
    assert np.mean(reg.mask == inside) >= 0.99
    assert reg.contains(C)
    assert len(reg.contours) == 1


def test_lrt_alpha_limits():
    full = lrt_region(_quad_result(), 0.0, grid_resolution=40)
    assert full.mask.all()
    tiny = lrt_region(_quad_result(), 1.0 - 1e-12, grid_resolution=41)
    cells = np.argwhere(tiny.mask)
    assert 0 < len(cells) <= 4
    spacing = BOX.width / 40
    for idx in cells:
        assert np.all(np.abs(BOX.lower + idx * spacing - C) <= spacing)


def test_lrt_rejects_high_dimension():
    box4 = ThetaBox(np.zeros(4), np.ones(4))
    res = SimpleNamespace(gp=QuadraticSurrogate(box4, np.full(4, 0.5), np.eye(4)), theta_hat=np.full(4, 0.5), eta_at_hat=0.0)
    with pytest.raises(ValueError, match="rao_region"):
        lrt_region(res, 0.05)


def test_rao_identity_radius():
    reg = RaoRegion(np.zeros(2), np.eye(2), chi2_threshold(0.05, 2))
    assert reg.radius2 == pytest.approx(5.991, abs=1e-3)
    assert reg.contains(np.zeros(2))
    assert reg.contains(np.array([2.4, 0.0])) and not reg.contains(np.array([2.5, 0.0]))


def test_lrt_and_rao_agree_on_quadratic_surface():
    res = _fitted_quadratic_result()
    lrt = lrt_region(res, 0.05, grid_resolution=200)
    rao = rao_region(res, 0.05)
    assert rao.contains(res.theta_hat)
    np.testing.assert_allclose(rao.shape, 2 * A, rtol=0.02)
    assert symmetric_difference_fraction(lrt.mask, rao.mask(lrt.axes)) < 0.02


def test_symmetric_difference_fraction():
    a = np.zeros((4, 4), bool)
    a[:2, :2] = True
    b = a.copy()
    b[0, 0] = False
    assert symmetric_difference_fraction(a, b) == 0.25
    assert symmetric_difference_fraction(a, a) == 0.0


def _tiny_ou_config():
    ou = get_model("ou")
    return ou, SkboConfig(box=ou.default_box, n_init=8, max_points=12, seed=3, smc=SmcConfig(K=2, M=4), candidate_pool=300)


def test_coverage_alpha_zero_is_one():
    ou, cfg = _tiny_ou_config()
    out = coverage_experiment(ou, [2.0, -3.0], 3, cfg, alpha=0.0, n_obs=100)
    assert out.proportion == 1.0 and out.se == 0.0 and out.n_ok == 3


def test_coverage_counts_failures_and_reports_binomial_se():
    ou, cfg = _tiny_ou_config()
    calls = {"n": 0}

    def simulate(rng):
        calls["n"] += 1
        if calls["n"] == 2:
            raise RuntimeError("simulator broke")
        return ou.simulator(np.array([2.0, -3.0]), 100, 0.1, rng)

    out = coverage_experiment(ou, [2.0, -3.0], 4, cfg, alpha=0.05, simulate=simulate)
    assert out.n_failed == 1 and out.n_ok == 3
    c = out.proportion
    assert out.se == pytest.approx(np.sqrt(c * (1 - c) / 3))


def test_coverage_requires_simulator():
    ou, cfg = _tiny_ou_config()
    with pytest.raises(ValueError):
        coverage_experiment(ou, [2.0, -3.0], 0, cfg)
