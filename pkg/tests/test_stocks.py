import math

import numpy as np
import pytest

from sdeskbo import stocks
from sdeskbo.models import gbm_exact_mle, get_model, simulate_gbm
from sdeskbo.rng import substream
from sdeskbo.smc import SmcConfig
from sdeskbo.stocks import (
    IngestionError,
    PriceSeries,
    aic,
    default_stock_config,
    ingest_prices,
    stock_analysis,
)


def _write(tmp_path, text, name="p.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_two_row_file(tmp_path):
    ps = ingest_prices(_write(tmp_path, "Date,Open,Adj Close\n2020-01-02,1,100.0\n2020-01-03,1,101.0\n"))
    assert len(ps) == 2
    np.testing.assert_array_equal(ps.adjusted_close, [100.0, 101.0])


def test_unsorted_rows_are_sorted(tmp_path):
    ps = ingest_prices(_write(tmp_path, "Date,Adj Close\n2020-01-06,3\n2020-01-02,1\n2020-01-03,2\n"))
    assert [d.isoformat() for d in ps.dates] == ["2020-01-02", "2020-01-03", "2020-01-06"]
    np.testing.assert_array_equal(ps.adjusted_close, [1, 2, 3])


def test_zero_price_names_row(tmp_path):
    with pytest.raises(IngestionError, match="row 3"):
        ingest_prices(_write(tmp_path, "Date,Adj Close\n2020-01-02,1\n2020-01-03,0\n"))


@pytest.mark.parametrize("text,pattern", [
    ("Date,Close\n2020-01-02,1\n", "missing column"),
    ("Date,Adj Close\n2020-01-02,1\n2020-01-02,2\n", r"row 3: duplicate date 2020-01-02 \(first at row 2\)"),
    ("Date,Adj Close\n01/02/2020,1\n", "row 2: bad date"),
    ("Date,Adj Close\n2020-01-02,abc\n", "row 2: bad price"),
    ("Date,Adj Close\n", "no data rows"),
])
def test_ingestion_errors(tmp_path, text, pattern):
    with pytest.raises(IngestionError, match=pattern):
        ingest_prices(_write(tmp_path, text))


def test_price_series_validation():
    with pytest.raises(ValueError):
        PriceSeries((1, 2), np.array([1.0]))
    with pytest.raises(ValueError):
        PriceSeries((2, 1), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        PriceSeries((1, 2), np.array([1.0, -2.0]))
    assert PriceSeries((1, 2, 3), np.array([1.0, 2.0, 3.0])).to_series().dt[0] == pytest.approx(1 / 252)


def test_aic_arithmetic():
    assert aic(-6797, 2) == 13598


def test_gbm_loglik_shifts_by_log_scale():
    # rescaling prices shifts the price-scale log-likelihood by -n log c for
    # every model, so AIC and LRT comparisons are unaffected
    s = simulate_gbm((0.1, 0.3), 300, 1 / 252, substream(1), x0=20.0)
    scaled = type(s)(s.times, 7.0 * s.values)
    a, b = gbm_exact_mle(s), gbm_exact_mle(scaled)
    assert b.loglik == pytest.approx(a.loglik - 300 * math.log(7.0), rel=1e-12)
    assert b.gamma == pytest.approx(a.gamma, rel=1e-12)


def test_default_config():
    cfg = default_stock_config(seed=3)
    assert cfg.box.p == 3 and cfg.smc.K == 10 and cfg.smc.M == 100 and cfg.seed == 3
    assert cfg.stop_patience >= cfg.max_points - cfg.n_init


def _small_prices():
    g = get_model("gen_gbm")
    s = g.simulator(g.from_natural((0.2, 1.0, 0.75)), 300, 1 / 252, substream(4, "small"), x0=50.0)
    return PriceSeries(tuple(range(s.values.size)), s.values)


def test_stock_analysis_record():
    cfg = default_stock_config(seed=1).replace(n_init=10, max_points=14, smc=SmcConfig(K=2, M=4), candidate_pool=500)
    out = stock_analysis(_small_prices(), skbo=cfg, final_smc=SmcConfig(K=3, M=9))
    assert not out.partial and out.error is None
    assert out.gbm_aic == aic(out.gbm.loglik, 2) and out.gen_aic == aic(out.gen_loglik, 3)
    assert out.lrt == pytest.approx(2 * (out.gen_loglik - out.gbm.loglik))
    assert 0.0 <= out.p_value <= 1.0
    d = out.to_dict()
    assert {"gen_psi", "lrt", "p_value", "skbo_added"} <= set(d)


def test_stock_analysis_partial_on_failure(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("surrogate fit failed")

    monkeypatch.setattr(stocks, "run_skbo", boom)
    out = stock_analysis(_small_prices())
    assert out.partial and "surrogate fit failed" in out.error
    assert np.isfinite(out.gbm.loglik)
    assert "gen_psi" not in out.to_dict()


def test_stock_analysis_needs_enough_data():
    with pytest.raises(ValueError):
        stock_analysis(PriceSeries(tuple(range(50)), np.linspace(1, 2, 50)))
