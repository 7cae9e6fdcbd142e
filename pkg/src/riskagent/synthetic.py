"""Synthetic daily markets used by the learning-sanity and CVaR checks.

Both generators are deterministic in their seed and emit plain bars, so the
shipped CSV fixtures can be regenerated with ``python -m riskagent.synthetic``.
"""
from __future__ import annotations

import argparse
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .data import Bar, PricePanel, align_calendar, write_price_csv


def business_days(start: date, n: int) -> list[date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out


def _bars(tickers, dates, close: np.ndarray, rng: np.random.Generator, spread: float = 0.004) -> list[Bar]:
    bars = []
    for t, d in enumerate(dates):
        for i, tk in enumerate(tickers):
            c = float(close[t, i])
            o = float(close[t - 1, i]) if t else c
            wiggle = abs(rng.normal(0.0, spread, 2))
            hi = max(o, c) * (1.0 + wiggle[0])
            lo = min(o, c) * (1.0 - wiggle[1])
            vol = float(rng.integers(100_000, 1_000_000))
            bars.append(Bar(tk, d, o, hi, lo, c, vol))
    return bars


def mean_reverting_closes(n_days: int = 400, seed: int = 7, theta: float = 0.15,
                          sigma: float = 0.03, level: float = 100.0) -> np.ndarray:
    """Two assets whose log prices follow independent Ornstein-Uhlenbeck paths around ``level``."""
    rng = np.random.default_rng(seed)
    x = np.zeros((n_days, 2))
    for t in range(1, n_days):
        x[t] = (1.0 - theta) * x[t - 1] + sigma * rng.standard_normal(2)
    return level * np.exp(x)


def crash_closes(n_days: int = 500, seed: int = 14, drift: float = 0.006, vol: float = 0.01,
                 crash_p: float = 0.02, crash_size: float = -0.20, safe_drift: float = 0.0003,
                 safe_vol: float = 0.002) -> np.ndarray:
    """Asset 0 grinds up but suffers rare crash days; asset 1 is a low-volatility safe haven."""
    rng = np.random.default_rng(seed)
    r0 = drift + vol * rng.standard_normal(n_days - 1)
    crashes = rng.random(n_days - 1) < crash_p
    r0[crashes] = crash_size
    r1 = safe_drift + safe_vol * rng.standard_normal(n_days - 1)
    close = np.empty((n_days, 2))
    close[0] = 100.0
    close[1:, 0] = 100.0 * np.cumprod(1.0 + r0)
    close[1:, 1] = 100.0 * np.cumprod(1.0 + r1)
    return close


def panel_from_closes(close: np.ndarray, tickers=("AAA", "BBB"), start: date = date(2020, 1, 2),
                      seed: int = 0) -> PricePanel:
    dates = business_days(start, close.shape[0])
    return align_calendar(_bars(list(tickers), dates, close, np.random.default_rng(seed)), "strict")


def mean_reverting_market(**kw) -> PricePanel:
    return panel_from_closes(mean_reverting_closes(**kw), ("MRA", "MRB"))


def crash_market(**kw) -> PricePanel:
    return panel_from_closes(crash_closes(**kw), ("CRASH", "SAFE"))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="write the synthetic market fixtures")
    ap.add_argument("out_dir", type=Path)
    args = ap.parse_args(argv)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_price_csv(mean_reverting_market(), args.out_dir / "mean_reverting.csv")
    write_price_csv(crash_market(), args.out_dir / "crash.csv")


if __name__ == "__main__":
    main()
