import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskagent.data import (Bar, NewsRecord, align_calendar, cci, compute_indicators, ema,
                            load_news_jsonl, load_price_csv, macd_line, rolling_std, rsi,
                            sample_daily_news, write_price_csv)
from riskagent.errors import DataError

from oracles import wilder_rsi


def test_load_row_maps_fields(fixtures):
    bars = load_price_csv(fixtures / "prices_small.csv")
    assert bars[0] == Bar("AAPL", date(2021, 1, 4), 133.52, 133.61, 126.76, 129.41, 143301900.0)


def test_load_fixture_count(fixtures):
    bars = load_price_csv(fixtures / "prices_small.csv")
    assert len(bars) == 6
    assert [b.ticker for b in bars[:2]] == ["AAPL", "MSFT"]  # row order preserved


def test_negative_price_rejected(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("date,ticker,open,high,low,close,volume\n2021-01-04,AAPL,1,2,0.5,-1,10\n")
    with pytest.raises(DataError, match="non-positive price"):
        load_price_csv(p)


def test_malformed_row_names_row_and_column(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("date,ticker,open,high,low,close,volume\n"
                 "2021-01-04,AAPL,1,2,0.5,1.5,10\n2021-01-05,AAPL,1,abc,0.5,1.5,10\n")
    with pytest.raises(DataError, match=r"row 2, column .high."):
        load_price_csv(p)


def test_empty_file_rejected(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("")
    with pytest.raises(DataError):
        load_price_csv(p)
    p.write_text("date,ticker,open,high,low,close,volume\n")
    with pytest.raises(DataError):
        load_price_csv(p)


def test_bar_invariants():
    with pytest.raises(DataError):
        Bar("A", date(2021, 1, 1), 10, 9, 8, 9.5, 1)  # open above high
    with pytest.raises(DataError):
        Bar("A", date(2021, 1, 1), 10, 11, 9, 10, -1)


def test_align_identical_calendars(fixtures):
    panel = align_calendar(load_price_csv(fixtures / "prices_small.csv"))
    assert (panel.n_days, panel.n_tickers) == (3, 2)
    assert not panel.filled.any()


def test_align_forward_fill(fixtures):
    panel = align_calendar(load_price_csv(fixtures / "prices_gap.csv"), "ffill")
    b, d3 = panel.tickers.index("B"), panel.dates.index(date(2021, 1, 6))
    assert panel.close[d3, b] == panel.close[d3 - 1, b] == 20.0
    assert panel.volume[d3, b] == 0
    assert panel.filled[d3, b] and panel.filled.sum() == 1


def test_align_strict_names_gap(fixtures):
    with pytest.raises(DataError, match=r"B.*2021-01-06"):
        align_calendar(load_price_csv(fixtures / "prices_gap.csv"), "strict")


def test_align_requested_ticker_without_data(fixtures):
    with pytest.raises(DataError, match="ZZZ"):
        align_calendar(load_price_csv(fixtures / "prices_small.csv"), tickers=["AAPL", "ZZZ"])


def test_align_idempotent_and_csv_round_trip(fixtures, tmp_path):
    panel = align_calendar(load_price_csv(fixtures / "prices_gap.csv"))
    again = align_calendar(panel.to_bars())
    assert again.same_bars(panel)
    write_price_csv(panel, tmp_path / "out.csv")
    assert align_calendar(load_price_csv(tmp_path / "out.csv")).same_bars(panel)


def test_constant_series_indicators():
    c = np.full(60, 42.0)
    assert np.all(rsi(c, 14)[14:] == 50.0)
    assert np.all(rolling_std(c, 30)[29:] == 0.0)
    assert np.all(macd_line(c) == 0.0)
    assert np.all(cci(c, c, c, 14)[13:] == 0.0)


def test_rsi_matches_wilder_by_hand():
    close = [44.34, 44.09, 44.15, 43.61, 44.33, 44.83, 45.10, 45.42, 45.84, 46.08,
             45.89, 46.03, 45.61, 46.28, 46.28, 46.00, 46.03, 46.41, 46.22, 45.64]
    ours = rsi(np.array(close), 14)
    ref = wilder_rsi(close, 14)
    assert np.all(np.isnan(ours[:14]))
    for t, v in ref.items():
        assert ours[t] == pytest.approx(v, abs=1e-10)
    # the 15-bar textbook value
    assert ours[14] == pytest.approx(70.46, abs=0.01)


def test_ema_recursion():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    a = 2 / 4
    ref = [1.0]
    for v in x[1:]:
        ref.append(a * v + (1 - a) * ref[-1])
    assert np.allclose(ema(x, 3), ref, rtol=0, atol=1e-15)


def test_compute_indicators_backfills_and_is_finite(mr_panel):
    assert mr_panel.indicators.shape == (mr_panel.n_days, 2, 4)
    assert np.all(np.isfinite(mr_panel.indicators))
    std_col = mr_panel.indicators[:, 0, 3]
    assert np.all(std_col[:29] == std_col[29])


def test_compute_indicators_warmup_error(fixtures):
    panel = align_calendar(load_price_csv(fixtures / "prices_small.csv"))
    with pytest.raises(DataError, match="warm-up"):
        compute_indicators(panel)


def _rec(tk="AAPL", d=date(2021, 1, 4), sid="s", head="h"):
    return NewsRecord(tk, d, head, "", sid)


def test_sample_singleton_and_empty():
    r = _rec()
    assert sample_daily_news([r], 0) == {("AAPL", date(2021, 1, 4)): r}
    assert sample_daily_news([], 0) == {}


def test_sample_deterministic_and_order_free(rng):
    recs = [_rec(sid=f"s{k}", head=f"h{k}") for k in range(3)] + [_rec("MSFT", sid="m")]
    first = sample_daily_news(recs, 7)
    for _ in range(5):
        shuffled = list(recs)
        rng.shuffle(shuffled)
        assert sample_daily_news(shuffled, 7) == first
    assert len(first) == 2


def test_sample_uniform_frequency():
    recs = [_rec(sid=f"s{k:02d}") for k in range(10)]
    counts = {}
    for seed in range(60000):
        pick = sample_daily_news(recs, seed)[("AAPL", date(2021, 1, 4))].source_id
        counts[pick] = counts.get(pick, 0) + 1
    assert len(counts) == 10
    assert all(abs(c - 6000) <= 300 for c in counts.values()), counts


def test_news_jsonl_universe_and_unicode(fixtures):
    recs = load_news_jsonl(fixtures / "news.jsonl")
    assert any("Société" in r.headline for r in recs)
    with pytest.raises(DataError, match="universe"):
        load_news_jsonl(fixtures / "news.jsonl", universe=["MRA"])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1.0, 500.0), min_size=20, max_size=60))
def test_rsi_in_range(closes):
    v = rsi(np.array(closes), 14)[14:]
    assert np.all((v >= 0) & (v <= 100))
    assert not any(math.isnan(x) for x in v)
