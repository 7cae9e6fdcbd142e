"""Price and news ingestion: CSV/JSONL loading, calendar alignment,
technical indicators and per-stock-per-day news sampling."""
from __future__ import annotations

import bisect
import csv
import dataclasses
import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .errors import DataError

PRICE_COLUMNS = ("date", "ticker", "open", "high", "low", "close", "volume")
FILL_POLICIES = ("ffill", "strict")
DEFAULT_INDICATORS = ("macd", "rsi_14", "cci_14", "close_std_30")


@dataclass(frozen=True)
class Bar:
    ticker: str
    date: date
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self):
        prices = (self.open, self.high, self.low, self.close)
        if not all(math.isfinite(p) for p in prices) or min(prices) <= 0:
            raise DataError(f"non-positive price in bar {self.ticker} {self.date}")
        if not (self.low <= self.open <= self.high and self.low <= self.close <= self.high):
            raise DataError(f"inconsistent OHLC in bar {self.ticker} {self.date}")
        if not math.isfinite(self.volume) or self.volume < 0:
            raise DataError(f"negative volume in bar {self.ticker} {self.date}")


@dataclass(frozen=True)
class NewsRecord:
    ticker: str
    date: date
    headline: str
    body: str = ""
    source_id: str = ""

    def sort_key(self):
        return (self.ticker, self.date, self.source_id, self.headline, self.body)

    def to_json(self) -> dict:
        return {
            "ticker": self.ticker,
            "date": self.date.isoformat(),
            "headline": self.headline,
            "body": self.body,
            "source_id": self.source_id,
        }


@dataclass(frozen=True, eq=False)
class PricePanel:
    """T trading days x N tickers of aligned bars plus a T x N x K indicator grid."""

    tickers: tuple[str, ...]
    dates: tuple[date, ...]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    filled: np.ndarray
    indicators: np.ndarray = field(default=None)
    indicator_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.indicators is None:
            t, n = self.close.shape
            object.__setattr__(self, "indicators", np.zeros((t, n, 0)))
        for arr in (self.open, self.high, self.low, self.close, self.volume, self.indicators):
            arr.setflags(write=False)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_tickers(self) -> int:
        return len(self.tickers)

    def bar(self, t: int, i: int) -> Bar:
        return Bar(
            self.tickers[i],
            self.dates[t],
            float(self.open[t, i]),
            float(self.high[t, i]),
            float(self.low[t, i]),
            float(self.close[t, i]),
            float(self.volume[t, i]),
        )

    def to_bars(self) -> list[Bar]:
        return [self.bar(t, i) for t in range(self.n_days) for i in range(self.n_tickers)]

    def index_of(self, day: date) -> int:
        try:
            return self.dates.index(day)
        except ValueError:
            raise DataError(f"date {day} not in panel") from None

    def window(self, start: date | None = None, end: date | None = None) -> "PricePanel":
        """Sub-panel over ``start <= date <= end`` (indicators carried over)."""
        lo = 0 if start is None else bisect.bisect_left(self.dates, start)
        hi = self.n_days if end is None else bisect.bisect_right(self.dates, end)
        if hi - lo < 2:
            raise DataError(f"window {start}..{end} holds fewer than 2 trading days")
        sl = slice(lo, hi)
        return PricePanel(
            self.tickers,
            self.dates[sl],
            self.open[sl],
            self.high[sl],
            self.low[sl],
            self.close[sl],
            self.volume[sl],
            self.filled[sl],
            self.indicators[sl],
            self.indicator_names,
        )

    def same_bars(self, other: "PricePanel") -> bool:
        return (
            self.tickers == other.tickers
            and self.dates == other.dates
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("open", "high", "low", "close", "volume")
            )
        )


def _parse_row(row: dict, rowno: int) -> Bar:
    values = {}
    for col in PRICE_COLUMNS:
        raw = row.get(col)
        if raw is None or raw.strip() == "":
            raise DataError(f"row {rowno}, column '{col}': missing value")
        raw = raw.strip()
        if col == "ticker":
            values[col] = raw
        elif col == "date":
            try:
                values[col] = date.fromisoformat(raw)
            except ValueError:
                raise DataError(f"row {rowno}, column 'date': bad ISO date {raw!r}") from None
        else:
            try:
                num = float(raw)
            except ValueError:
                raise DataError(f"row {rowno}, column '{col}': not a number {raw!r}") from None
            if not math.isfinite(num):
                raise DataError(f"row {rowno}, column '{col}': non-finite value")
            if col != "volume" and num <= 0:
                raise DataError(f"row {rowno}, column '{col}': non-positive price {raw}")
            if col == "volume" and num < 0:
                raise DataError(f"row {rowno}, column 'volume': negative volume {raw}")
            values[col] = num
    try:
        return Bar(**values)
    except DataError as exc:
        raise DataError(f"row {rowno}: {exc}") from None


def load_price_csv(path: str | Path) -> list[Bar]:
    """Read ``date,ticker,open,high,low,close,volume`` rows, preserving order.

    Row numbers in error messages count data rows from 1 (header excluded).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"price file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"empty price file: {path}")
        missing = [c for c in PRICE_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: header lacks columns {missing}")
        bars = [_parse_row(row, i) for i, row in enumerate(reader, start=1)]
    if not bars:
        raise DataError(f"empty price file: {path}")
    return bars


def write_price_csv(panel: PricePanel, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PRICE_COLUMNS)
        for t, day in enumerate(panel.dates):
            for i, tic in enumerate(panel.tickers):
                writer.writerow(
                    [
                        day.isoformat(),
                        tic,
                        repr(float(panel.open[t, i])),
                        repr(float(panel.high[t, i])),
                        repr(float(panel.low[t, i])),
                        repr(float(panel.close[t, i])),
                        repr(float(panel.volume[t, i])),
                    ]
                )


def align_calendar(
    bars: Iterable[Bar],
    policy: str = "ffill",
    tickers: Sequence[str] | None = None,
) -> PricePanel:
    """Build a gap-free panel over the union of trading days.

    ``ffill`` copies the previous close into all four prices with zero
    volume; a gap before a ticker's first bar is back-filled from that first
    close. ``strict`` rejects any gap.
    """
    if policy not in FILL_POLICIES:
        raise DataError(f"unknown fill policy {policy!r}; expected one of {FILL_POLICIES}")
    by_key: dict[tuple[str, date], Bar] = {}
    for bar in bars:
        key = (bar.ticker, bar.date)
        if key in by_key:
            raise DataError(f"duplicate bar for {bar.ticker} on {bar.date}")
        by_key[key] = bar
    seen = sorted({k[0] for k in by_key})
    universe = list(tickers) if tickers is not None else seen
    absent = [t for t in universe if t not in seen]
    if absent:
        raise DataError(f"no price data for tickers {absent}")
    if not universe:
        raise DataError("no bars to align")
    dates = sorted({k[1] for k in by_key if k[0] in universe})
    t_count, n_count = len(dates), len(universe)
    if not any(all((tic, d) in by_key for d in dates) for tic in universe):
        raise DataError("no ticker has a complete date series")

    gaps = [(tic, d) for tic in universe for d in dates if (tic, d) not in by_key]
    if gaps and policy == "strict":
        listed = ", ".join(f"({tic}, {d.isoformat()})" for tic, d in gaps)
        raise DataError(f"strict alignment: missing bars {listed}")

    grid = np.zeros((5, t_count, n_count))
    filled = np.zeros((t_count, n_count), dtype=bool)
    for i, tic in enumerate(universe):
        first = next(by_key[(tic, d)] for d in dates if (tic, d) in by_key)
        last_close = first.close
        for t, d in enumerate(dates):
            bar = by_key.get((tic, d))
            if bar is None:
                grid[:4, t, i] = last_close
                grid[4, t, i] = 0.0
                filled[t, i] = True
            else:
                grid[:, t, i] = (bar.open, bar.high, bar.low, bar.close, bar.volume)
                last_close = bar.close
    return PricePanel(tuple(universe), tuple(dates), *grid, filled)


# --------------------------------------------------------------------------
# technical indicators


@dataclass(frozen=True)
class Indicator:
    name: str
    warmup: int
    compute: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    # maps raw values + close to an O(1)-scaled observation feature
    normalize: Callable[[np.ndarray, np.ndarray], np.ndarray]


def ema(x: np.ndarray, span: int) -> np.ndarray:
    """Exponential moving average seeded with the first value (alpha = 2/(span+1))."""
    return kernels.ewm(np.asarray(x, dtype=np.float64), 2.0 / (span + 1.0), 0)


def macd_line(close, fast=12, slow=26):
    return ema(close, fast) - ema(close, slow)


def rsi(close: np.ndarray, n: int = 14) -> np.ndarray:
    """Wilder RSI; NaN for the first ``n`` rows, 50 on zero-movement windows."""
    close = np.asarray(close, dtype=np.float64)
    out = np.full(len(close), np.nan)
    if len(close) <= n:
        return out
    delta = np.diff(close, prepend=close[0])
    gain = np.where(delta > 0, delta, 0.0)
    loss = np.where(delta < 0, -delta, 0.0)
    gain[n] = gain[1 : n + 1].mean()
    loss[n] = loss[1 : n + 1].mean()
    avg_gain = kernels.ewm(gain, 1.0 / n, n)
    avg_loss = kernels.ewm(loss, 1.0 / n, n)
    g, lo = avg_gain[n:], avg_loss[n:]
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 100.0 - 100.0 / (1.0 + g / lo)
    val = np.where(lo == 0, np.where(g == 0, 50.0, 100.0), val)
    out[n:] = val
    return out


def cci(high, low, close, n: int = 14) -> np.ndarray:
    """Commodity Channel Index; 0 where the mean deviation vanishes."""
    tp = (np.asarray(high) + np.asarray(low) + np.asarray(close)) / 3.0
    out = np.full(len(tp), np.nan)
    if len(tp) < n:
        return out
    win = sliding_window_view(tp, n)
    sma = win.mean(axis=1)
    mad = np.abs(win - sma[:, None]).mean(axis=1)
    dev = tp[n - 1 :] - sma
    with np.errstate(divide="ignore", invalid="ignore"):
        val = dev / (0.015 * mad)
    out[n - 1 :] = np.where(mad == 0, 0.0, val)
    return out


def rolling_std(x, n: int = 30) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.full(len(x), np.nan)
    if len(x) < n:
        return out
    out[n - 1 :] = sliding_window_view(x, n).std(axis=1, ddof=1)
    return out


def rolling_mean(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.full(len(x), np.nan)
    if len(x) >= n:
        out[n - 1 :] = sliding_window_view(x, n).mean(axis=1)
    return out


def _by_price(v, c):
    return v / c


def _centered_pct(v, c):
    return (v - 50.0) / 50.0


def _indicator(name: str) -> Indicator:
    m = re.fullmatch(r"macd(?:_(\d+)_(\d+))?", name)
    if m:
        fast, slow = (int(m[1]), int(m[2])) if m[1] else (12, 26)
        return Indicator(name, slow, lambda h, lo, c: macd_line(c, fast, slow), _by_price)
    m = re.fullmatch(r"macd_(signal|hist)(?:_(\d+)_(\d+)_(\d+))?", name)
    if m:
        fast, slow, sig = (int(m[2]), int(m[3]), int(m[4])) if m[2] else (12, 26, 9)
        if m[1] == "signal":
            fn = lambda h, lo, c: ema(macd_line(c, fast, slow), sig)  # noqa: E731
        else:
            fn = lambda h, lo, c: macd_line(c, fast, slow) - ema(macd_line(c, fast, slow), sig)  # noqa: E731
        return Indicator(name, slow + sig, fn, _by_price)
    m = re.fullmatch(r"rsi_(\d+)", name)
    if m:
        n = int(m[1])
        return Indicator(name, n + 1, lambda h, lo, c: rsi(c, n), _centered_pct)
    m = re.fullmatch(r"cci_(\d+)", name)
    if m:
        n = int(m[1])
        return Indicator(name, n, lambda h, lo, c: cci(h, lo, c, n), lambda v, c: v / 100.0)
    m = re.fullmatch(r"close_std_(\d+)", name)
    if m:
        n = int(m[1])
        return Indicator(name, n, lambda h, lo, c: rolling_std(c, n), _by_price)
    m = re.fullmatch(r"sma_(\d+)", name)
    if m:
        n = int(m[1])
        return Indicator(name, n, lambda h, lo, c: rolling_mean(c, n), lambda v, c: v / c - 1.0)
    raise DataError(f"unknown indicator {name!r}")


def indicator(name: str) -> Indicator:
    return _indicator(name)


def _backfill(col: np.ndarray) -> np.ndarray:
    valid = np.flatnonzero(~np.isnan(col))
    if len(valid) == 0:
        raise DataError("indicator has no valid values")
    col = col.copy()
    col[: valid[0]] = col[valid[0]]
    return col


def compute_indicators(panel: PricePanel, spec: Sequence[str] = DEFAULT_INDICATORS) -> PricePanel:
    """Populate the indicator grid; warm-up rows take the first valid value."""
    specs = [_indicator(name) for name in spec]
    warmup = max((s.warmup for s in specs), default=0)
    if panel.n_days < warmup:
        raise DataError(f"panel has {panel.n_days} days, indicators need a warm-up of {warmup}")
    grid = np.zeros((panel.n_days, panel.n_tickers, len(specs)))
    for i in range(panel.n_tickers):
        h, lo, c = panel.high[:, i], panel.low[:, i], panel.close[:, i]
        for k, s in enumerate(specs):
            grid[:, i, k] = _backfill(s.compute(h, lo, c))
    if not np.all(np.isfinite(grid)):
        raise DataError("non-finite indicator values")
    return dataclasses.replace(panel, indicators=grid, indicator_names=tuple(spec))


def normalized_indicators(panel: PricePanel) -> np.ndarray:
    """Indicator grid rescaled to O(1) for use as policy inputs."""
    out = np.empty_like(panel.indicators)
    for k, name in enumerate(panel.indicator_names):
        out[:, :, k] = _indicator(name).normalize(panel.indicators[:, :, k], panel.close)
    return out


# --------------------------------------------------------------------------
# news


def _news_from_obj(obj: dict, where: str) -> NewsRecord:
    try:
        ticker = str(obj["ticker"])
        day = date.fromisoformat(str(obj["date"]))
    except KeyError as exc:
        raise DataError(f"{where}: missing key {exc}") from None
    except ValueError:
        raise DataError(f"{where}: unparseable date {obj.get('date')!r}") from None
    return NewsRecord(
        ticker,
        day,
        str(obj.get("headline") or ""),
        str(obj.get("body") or ""),
        str(obj.get("source_id") or ""),
    )


def load_news_jsonl(path: str | Path, universe: Iterable[str] | None = None) -> list[NewsRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"news file not found: {path}")
    known = set(universe) if universe is not None else None
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            rec = _news_from_obj(obj, f"{path}:{lineno}")
            if known is not None and rec.ticker not in known:
                raise DataError(f"{path}:{lineno}: ticker {rec.ticker!r} not in universe")
            records.append(rec)
    return records


def write_news_jsonl(records: Iterable[NewsRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def sample_daily_news(records: Iterable[NewsRecord], seed: int) -> dict[tuple[str, date], NewsRecord]:
    """Pick one article per (ticker, day), uniformly under ``seed``.

    Records are canonically sorted first, so the result does not depend on
    input order.
    """
    groups: dict[tuple[str, date], list[NewsRecord]] = defaultdict(list)
    for rec in sorted(records, key=NewsRecord.sort_key):
        groups[(rec.ticker, rec.date)].append(rec)
    rng = np.random.default_rng(seed)
    return {key: group[int(rng.integers(len(group)))] for key, group in sorted(groups.items())}
