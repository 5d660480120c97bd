import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cocrash.errors import ConfigurationError
from cocrash.jumps import (
    BIPOWER_C,
    DetectorConfig,
    PeriodicityProfile,
    bipower_scale,
    deseasonalize,
    detect_asset,
    detect_jumps,
    estimate_periodicity,
    gumbel_critical_value,
    jump_threshold,
    max_statistic_constants,
    rolling_bipower_scale,
)
from cocrash.marketdata import DEFAULT_SESSION, ReturnSeries
from cocrash.synthetic import u_shape
from oracles import gumbel_beta, lm_threshold, loop_bipower

SESSION = DEFAULT_SESSION

# Frozen from oracles.lm_threshold / oracles.gumbel_beta.
BETA_05 = 2.9701952490421637
THRESHOLD_20000_05 = 5.93028337246785
THRESHOLD_1000_01 = 5.690769707603041


def session_series(values, n_days=None, asset="X", start_day=17175):
    """Returns laid on consecutive session minutes starting Monday 2017-01-09."""
    values = np.asarray(values, dtype=float)
    per_day = SESSION.minutes_per_day
    n_days = n_days or -(-values.size // per_day)
    days = SESSION.session_days(__import__("datetime").date(2017, 1, 9), n_days)
    ts = np.concatenate([SESSION.bar_minutes(d)[1:] for d in days])[: values.size]
    return ReturnSeries(asset, ts, values)


def gaussian_series(rng, n, shape=None, vol=1e-3):
    s = session_series(np.zeros(n))
    f = np.ones(SESSION.bucket_count) if shape is None else shape
    return s.with_returns(rng.standard_normal(n) * vol * f[SESSION.bucket(s.timestamps)])


def test_gumbel_value():
    assert gumbel_critical_value(0.05) == pytest.approx(2.9702, abs=1e-3)
    assert gumbel_critical_value(0.05) == pytest.approx(BETA_05, rel=1e-14)
    assert BETA_05 == pytest.approx(gumbel_beta(0.05), rel=1e-15)


@pytest.mark.parametrize("n,alpha,expected", [(20000, 0.05, THRESHOLD_20000_05), (1000, 0.01, THRESHOLD_1000_01)])
def test_threshold_matches_closed_form(n, alpha, expected):
    assert jump_threshold(n, alpha) == pytest.approx(expected, rel=1e-13)
    assert expected == pytest.approx(lm_threshold(n, alpha), rel=1e-15)


def test_threshold_constants_shape():
    loc, scale = max_statistic_constants(20000)
    root = math.sqrt(2 * math.log(20000))
    assert scale == pytest.approx(1 / (BIPOWER_C * root))
    assert jump_threshold(20000, 0.01) > jump_threshold(20000, 0.05)


def test_bipower_plug_in_identity():
    s = 0.37
    r = np.full(40, BIPOWER_C * s) * np.where(np.arange(40) % 2, 1, -1)
    assert bipower_scale(r, 30, 20) == pytest.approx(s, rel=1e-12)


def test_bipower_minimal_window_by_hand():
    r = [0.01, -0.02, 0.015, 0.005, -0.01, 0.02, -0.005, 0.012, 0.0]
    # products j = 2..7: 3e-4 + 7.5e-5 + 5e-5 + 2e-4 + 1e-4 + 6e-5 = 7.85e-4
    hand = math.sqrt(7.85e-4 / 6 * math.pi / 2)
    assert bipower_scale(r, 8, 8) == pytest.approx(hand, rel=1e-12)


def test_bipower_robust_to_outlier(rng):
    r = rng.standard_normal(300)
    clean = r.copy()
    r[200] = 20.0
    window = slice(300 - 270 + 1, 299)
    bv_inflation = bipower_scale(r, 299, 270) / bipower_scale(clean, 299, 270) - 1
    sd_inflation = np.std(r[window]) / np.std(clean[window]) - 1
    assert bv_inflation < 0.5 * sd_inflation


def test_bipower_too_few_products_is_nan():
    r = np.full(30, np.nan)
    r[20:24] = 1.0
    assert math.isnan(bipower_scale(r, 25, 20))
    with pytest.raises(ConfigurationError):
        bipower_scale(np.ones(30), 5, 20)
    with pytest.raises(ConfigurationError):
        bipower_scale(np.ones(30), 20, 7)


@given(st.lists(st.one_of(st.floats(-5, 5, allow_nan=False), st.just(float("nan"))), min_size=10, max_size=80),
       st.integers(8, 30))
def test_rolling_matches_loop_oracle(values, K):
    r = np.array(values)
    rolled = rolling_bipower_scale(r, K)
    assert np.isnan(rolled[:K]).all()
    for i in range(K, r.size):
        expected = loop_bipower(r, i, K)
        if math.isnan(expected):
            assert math.isnan(rolled[i])
        else:
            assert rolled[i] == pytest.approx(expected, rel=1e-9, abs=1e-300)


def test_periodicity_flat_for_homoskedastic(rng):
    s = gaussian_series(rng, 50 * 390)
    f = estimate_periodicity(s, SESSION).bucket_factors
    assert f.min() >= 0.9 and f.max() <= 1.1


def test_periodicity_recovers_opening_burst(rng):
    shape = u_shape(SESSION, 30, 2.0, 0, 1.0)
    s = gaussian_series(rng, 50 * 390, shape)
    f = estimate_periodicity(s, SESSION).bucket_factors.reshape(5, 390)
    ratio = f[:, :30].mean() / f[:, 30:].mean()
    assert ratio == pytest.approx(2.0, rel=0.15)


def test_periodicity_recovers_planted_shape(rng):
    shape = u_shape(SESSION)
    s = gaussian_series(rng, 50 * 390, shape)
    est = estimate_periodicity(s, SESSION).bucket_factors
    truth = shape / np.sqrt(np.mean(shape ** 2))
    assert np.mean(np.abs(est / truth - 1)) < 0.15


def test_periodicity_needs_four_weeks(rng):
    with pytest.raises(ConfigurationError):
        estimate_periodicity(gaussian_series(rng, 19 * 390), SESSION)


def test_thin_buckets_fall_back_to_one(rng):
    s = gaussian_series(rng, 20 * 390)
    keep = SESSION.bucket(s.timestamps) % 390 != 100
    thin = ReturnSeries("X", s.timestamps[keep], s.returns[keep])
    with pytest.warns(UserWarning, match="fewer than 5"):
        f = estimate_periodicity(thin, SESSION, pool=0).bucket_factors.reshape(5, 390)
    assert np.isfinite(f).all() and (f > 0).all()
    # factors are weekday level times minute level, so every column is proportional
    np.testing.assert_allclose(f[:, 100] / f[0, 100], f[:, 200] / f[0, 200], rtol=1e-12)


def test_unknown_scale_rejected(rng):
    with pytest.raises(ConfigurationError):
        estimate_periodicity(gaussian_series(rng, 20 * 390), SESSION, scale="iqr")
    with pytest.raises(ConfigurationError):
        DetectorConfig(periodicity_scale="iqr")


def test_mad_scale_option(rng):
    shape = u_shape(SESSION)
    s = gaussian_series(rng, 50 * 390, shape)
    est = estimate_periodicity(s, SESSION, scale="mad").bucket_factors
    truth = shape / np.sqrt(np.mean(shape ** 2))
    assert np.mean(np.abs(est / truth - 1)) < 0.15


def test_profile_normalisation():
    p = PeriodicityProfile.normalized(np.full(1950, 3.0))
    assert np.mean(p.bucket_factors ** 2) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ConfigurationError):
        PeriodicityProfile(np.full(1950, 2.0), 1950)


def test_deseasonalize_examples():
    s = session_series([0.04, 0.01, -0.02])
    assert np.array_equal(deseasonalize(s, PeriodicityProfile.flat(1950), SESSION).returns, s.returns)
    f = np.ones(1950)
    f[0] = 2.0
    p = PeriodicityProfile.normalized(f)
    adj = deseasonalize(s, p, SESSION)
    scale = p.bucket_factors[1]
    assert adj.returns[0] * scale == pytest.approx(0.02, rel=1e-12)
    back = adj.returns * p.bucket_factors[SESSION.bucket(s.timestamps)]
    assert np.allclose(back, s.returns, rtol=0, atol=1e-12)


def test_detect_single_planted_jump(rng):
    s = gaussian_series(rng, 20 * 390)
    r = s.returns.copy()
    r[3000] -= 15e-3
    events = detect_asset(s.with_returns(r), DetectorConfig(), SESSION)
    assert [e.timestamp for e in events] == [int(s.timestamps[3000])]
    e = events[0]
    assert e.direction == -1 and e.raw_return == r[3000]
    assert abs(e.statistic) > jump_threshold(len(s) - 270, 0.05)


def test_short_series_is_configuration_error():
    with pytest.raises(ConfigurationError, match="at least 271"):
        detect_jumps(session_series(np.ones(100)), DetectorConfig())
    with pytest.raises(ConfigurationError):
        DetectorConfig(alpha=1.5)
    with pytest.raises(ConfigurationError):
        DetectorConfig(window_k=7)


def test_flat_fallback_when_history_is_short(rng, caplog):
    s = gaussian_series(rng, 5 * 390)
    with caplog.at_level("WARNING"):
        detect_asset(s, DetectorConfig(), SESSION)
    assert "flat periodicity" in caplog.text


def jumpy(rng, n=6000):
    s = gaussian_series(rng, n)
    r = s.returns.copy()
    idx = rng.choice(np.arange(400, n), 6, replace=False)
    r[idx] += rng.choice([-1, 1], 6) * rng.uniform(4e-3, 9e-3, 6)
    return s.with_returns(r)


@given(st.integers(0, 2**31), st.sampled_from([1e-3, 0.5, 7.0, 1e3]))
def test_scale_equivariance_property(seed, lam):
    s = jumpy(np.random.default_rng(seed))
    cfg = DetectorConfig()
    base = detect_jumps(s, cfg, SESSION)
    scaled = detect_jumps(s.with_returns(s.returns * lam), cfg, SESSION)
    assert [e.timestamp for e in base] == [e.timestamp for e in scaled]
    for a, b in zip(base, scaled):
        assert a.statistic == pytest.approx(b.statistic, rel=1e-9)


@given(st.integers(0, 2**31))
def test_alpha_monotonicity_and_direction(seed):
    s = jumpy(np.random.default_rng(seed))
    strict = detect_jumps(s, DetectorConfig(alpha=0.01), SESSION)
    loose = detect_jumps(s, DetectorConfig(alpha=0.05), SESSION)
    assert {e.timestamp for e in strict} <= {e.timestamp for e in loose}
    for e in loose:
        assert e.direction == (1 if e.raw_return > 0 else -1)


def test_determinism(rng):
    s = jumpy(rng)
    assert detect_jumps(s, DetectorConfig(), SESSION) == detect_jumps(s, DetectorConfig(), SESSION)
