from datetime import date

import numpy as np
import pytest

from riskagent.errors import ConfigError, DataError
from riskagent.infusion import (InfusionConfig, SignalGrid, adjust_return, aggregate_risk,
                                modulate_action, risk_factor, risk_factors, score_grid,
                                sentiment_factor, weights_from_positions)
from riskagent.scoring import SignalScore

from oracles import dot

SENTIMENT_TABLE = {
    (5, +1): 1.1, (1, -1): 1.1,
    (4, +1): 1.05, (2, -1): 1.05,
    (4, -1): 0.95, (2, +1): 0.95,
    (5, -1): 0.9, (1, +1): 0.9,
}


def test_sentiment_table_bit_exact():
    for (score, sign), expected in SENTIMENT_TABLE.items():
        assert sentiment_factor(score, sign) == expected
    for sign in (-1, 0, 1):
        assert sentiment_factor(3, sign) == 1.0
    for score in range(1, 6):
        assert sentiment_factor(score, 0) == 1.0


def test_risk_table_bit_exact():
    assert [risk_factor(s) for s in (5, 4, 3, 2, 1)] == [1.1, 1.05, 1.0, 0.95, 0.9]
    assert risk_factor(5, 0.001) == 1.001 and risk_factor(1, 0.001) == 0.999
    assert np.array_equal(risk_factors([1, 3, 5]), [0.9, 1.0, 1.1])


def test_factors_scale_linearly_with_strength():
    for k in (0.001, 0.02, 0.1, 0.3):
        assert risk_factor(5, k) - 1 == pytest.approx(k, abs=1e-15)
        assert risk_factor(4, k) - 1 == pytest.approx(k / 2, abs=1e-15)
        assert sentiment_factor(1, 1, k) - 1 == pytest.approx(-k, abs=1e-15)


def test_out_of_range_scores_rejected():
    for bad in (0, 6, None):
        with pytest.raises(DataError):
            sentiment_factor(bad, 1)
        with pytest.raises(DataError):
            risk_factor(bad)
    with pytest.raises(DataError):
        modulate_action([0.1], [7])


def test_modulation_preserves_sign_and_bounds(rng):
    for _ in range(200):
        a = rng.uniform(-1, 1, 4)
        a[rng.random(4) < 0.2] = 0.0
        s = rng.integers(1, 6, 4)
        out = modulate_action(a, s)
        assert np.all(np.sign(out) == np.sign(a))
        assert np.all(np.abs(out) <= 1.0)
        expected = [np.clip(sentiment_factor(int(si), ai) * ai, -1, 1) for ai, si in zip(a, s)]
        assert np.array_equal(out, expected)


def test_modulation_reclips():
    assert np.array_equal(modulate_action([0.95, -0.95], [5, 1]), [1.0, -1.0])


def test_weights_on_simplex(rng):
    for _ in range(100):
        h = rng.integers(0, 50, 3).astype(float)
        w = weights_from_positions(h, rng.uniform(1, 100, 3))
        assert np.all(w >= 0) and w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(weights_from_positions([0, 0], [5, 7]), [0.5, 0.5])


def test_aggregate_risk_matches_dot_and_is_bounded(rng):
    for _ in range(500):
        w = rng.dirichlet(np.ones(5))
        f = risk_factors(rng.integers(1, 6, 5))
        r = aggregate_risk(w, f)
        assert r == pytest.approx(dot(w, f), abs=1e-14)
        assert f.min() - 1e-12 <= r <= f.max() + 1e-12
    with pytest.raises(DataError):
        aggregate_risk([0.7, 0.7], [1.0, 1.0])


def test_adjusted_return():
    assert adjust_return(2.0, 1.05) == 2.1
    assert adjust_return(-2.0, 0.9) == -1.8
    with pytest.raises(DataError):
        adjust_return(1.0, 0.0)


def test_config_validation_and_phases():
    with pytest.raises(ConfigError):
        InfusionConfig(mode="loud")
    with pytest.raises(ConfigError):
        InfusionConfig(strength=0.0)
    cfg = InfusionConfig(mode="risk", apply_at="train")
    assert cfg.active("train") and not cfg.active("backtest")
    assert cfg.uses_risk and not cfg.uses_sentiment
    assert not InfusionConfig().active("train")


def _score(tk, d, s=None, r=None):
    return SignalScore(tk, d, s, r, "mock", "x")


def test_score_grid_placement():
    days = [date(2020, 1, 2), date(2020, 1, 3), date(2020, 1, 6), date(2020, 1, 7)]
    scores = [
        _score("A", date(2020, 1, 3), s=5, r=1),
        _score("A", date(2020, 1, 4), s=1),   # Saturday: moves to Monday
        _score("B", date(2020, 1, 5), s=2),   # Sunday: moves to Monday, newer than Saturday
        _score("B", date(2020, 1, 4), s=4),
        _score("B", date(2020, 1, 7), s=1, r=5),
        _score("A", date(2020, 1, 6), r=2),   # exact-day score keeps its risk only
        _score("C", date(2020, 1, 2), s=5),   # unknown ticker ignored
        _score("A", date(2020, 1, 8), s=5),   # after the calendar ignored
    ]
    g = score_grid(scores, ["A", "B"], days)
    assert g.sentiment.tolist() == [[3, 3], [5, 3], [1, 2], [3, 1]]
    assert g.risk.tolist() == [[3, 3], [1, 3], [2, 3], [3, 5]]


def test_exact_day_beats_shifted():
    days = [date(2020, 1, 3), date(2020, 1, 6)]
    g = score_grid([_score("A", date(2020, 1, 6), s=4), _score("A", date(2020, 1, 5), s=1)], ["A"], days)
    assert g.sentiment[1, 0] == 4


def test_signal_features():
    g = SignalGrid(np.array([[1, 5]]), np.array([[3, 4]]))
    assert g.features().tolist() == [[-1.0, 1.0, 0.0, 0.5]]
    n = SignalGrid.neutral(3, 2)
    assert np.all(n.features() == 0.0) and n.window(1, 3).sentiment.shape == (2, 2)
