"""Deterministic backtests and the reported risk metrics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import PricePanel, load_price_csv
from .env import EnvConfig, TradingEnv
from .errors import DataError, EnvError
from .infusion import InfusionConfig, SignalGrid, modulate_action
from .policy import FastPolicy, PolicyConfig, PolicyParams

REPORT_COLUMNS = ("date", "account_value", "benchmark_value", "daily_return", "benchmark_return")


@dataclass
class BacktestTrace:
    dates: list[date]
    values: np.ndarray
    cash: np.ndarray
    holdings: np.ndarray
    prices: np.ndarray
    actions: np.ndarray


def run_backtest(
    params: PolicyParams,
    panel: PricePanel,
    signals: SignalGrid | None = None,
    env_cfg: EnvConfig = EnvConfig(),
    infusion: InfusionConfig | None = None,
    seed: int = 0,
    start: date | None = None,
    end: date | None = None,
    policy_cfg: PolicyConfig = PolicyConfig(),
) -> BacktestTrace:
    """Roll the policy's mean action through ``start..end``; one value per day.

    ``seed`` is accepted for interface symmetry; the mean-action rollout
    consumes no randomness.
    """
    del seed
    infusion = infusion or InfusionConfig()
    if start is not None or end is not None:
        if (start is not None and start < panel.dates[0]) or (end is not None and end > panel.dates[-1]):
            raise DataError(f"backtest window {start}..{end} outside panel {panel.dates[0]}..{panel.dates[-1]}")
        lo = 0 if start is None else next((t for t, d in enumerate(panel.dates) if d >= start), None)
        window = panel.window(start, end)
        if signals is not None:
            signals = signals.window(lo, lo + window.n_days)
        panel = window
    cfg = EnvConfig(env_cfg.initial_cash, env_cfg.hmax, env_cfg.cost_rate, env_cfg.reward_scaling)
    observe = infusion.observes_signals
    if (observe or infusion.active("backtest")) and signals is None:
        signals = SignalGrid.neutral(panel.n_days, panel.n_tickers)
    env = TradingEnv(panel, cfg, signals, observe_signals=observe)
    if params.obs_dim != env.observation_size:
        raise EnvError(
            f"checkpoint expects {params.obs_dim} observation features but the panel gives "
            f"{env.observation_size} ({panel.n_tickers} tickers, {len(panel.indicator_names)} "
            f"indicators, signal features {'on' if observe else 'off'})"
        )
    if params.act_dim != panel.n_tickers:
        raise EnvError(f"checkpoint trades {params.act_dim} assets, panel has {panel.n_tickers}")
    modulate = infusion.active("backtest") and infusion.uses_sentiment
    fast = FastPolicy(params, policy_cfg.squash)
    t_count = panel.n_days
    values = np.empty(t_count)
    cash = np.empty(t_count)
    holdings = np.empty((t_count, panel.n_tickers))
    actions = np.zeros((t_count, panel.n_tickers))
    obs = env.reset(0)
    done = False
    for t in range(t_count):
        st = env.state
        values[t] = st.value
        cash[t] = st.cash
        holdings[t] = st.holdings
        if done:
            break
        a = fast.mean_action(obs)
        if modulate:
            a = modulate_action(a, signals.sentiment[st.t], infusion.strength)
        actions[t] = a
        obs, _, done = env.step(a)
    return BacktestTrace(list(panel.dates), values, cash, holdings, np.array(panel.close), actions)


# --------------------------------------------------------------------------
# metrics


def daily_returns(values: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least two account values")
    if np.any(v <= 0):
        raise ValueError("account values must be positive")
    return v[1:] / v[:-1] - 1.0


def _tail_size(fraction: float, n: int) -> int:
    # guard against 0.05 * 100 = 5.000000000000001 rounding up to 6
    return max(1, math.ceil(fraction * n - 1e-9))


def information_ratio(returns: Sequence[float], benchmark: Sequence[float]) -> float:
    """Daily (non-annualised) mean excess return over its sample std."""
    r = np.asarray(returns, dtype=np.float64)
    b = np.asarray(benchmark, dtype=np.float64)
    if r.shape != b.shape:
        raise ValueError(f"return series lengths differ: {r.shape} vs {b.shape}")
    if r.size < 2:
        raise ValueError("information ratio needs at least two observations")
    ex = r - b
    mu = ex.mean()
    sd = ex.std(ddof=1)
    if sd == 0:
        if mu == 0:
            return 0.0
        raise ValueError("excess returns are constant and non-zero; information ratio undefined")
    return float(mu / sd)


def cvar(returns: Sequence[float], alpha: float = 0.05) -> float:
    """Mean of the worst ceil(alpha * n) returns."""
    r = np.sort(np.asarray(returns, dtype=np.float64))
    if r.size == 0:
        raise ValueError("cvar needs at least one return")
    return float(r[: _tail_size(alpha, r.size)].mean())


def rachev(returns: Sequence[float], tail: float = 0.05) -> float:
    """Expected best-tail gain over the magnitude of the expected worst-tail loss."""
    r = np.sort(np.asarray(returns, dtype=np.float64))
    if r.size == 0:
        raise ValueError("rachev needs at least one return")
    k = _tail_size(tail, r.size)
    worst = r[:k].mean()
    best = r[::-1][:k].mean()
    if worst == 0:
        raise ValueError("worst-tail mean is zero; Rachev ratio undefined")
    return float(best / abs(worst))


@dataclass
class BacktestReport:
    dates: list[date]
    values: np.ndarray
    benchmark_values: Optional[np.ndarray]
    returns: np.ndarray
    benchmark_returns: Optional[np.ndarray]
    cumulative_return: float
    information_ratio: Optional[float]
    cvar: float
    rachev: Optional[float]
    alpha: float = 0.05

    def metrics(self) -> dict:
        return {
            "cumulative_return": self.cumulative_return,
            "information_ratio": self.information_ratio,
            "cvar": self.cvar,
            "rachev": self.rachev,
        }


def make_report(values: Sequence[float], benchmark_values: Sequence[float] | None = None,
                dates: Sequence[date] | None = None, alpha: float = 0.05,
                tail: float = 0.05) -> BacktestReport:
    v = np.asarray(values, dtype=np.float64)
    dates = list(dates) if dates is not None else list(range(len(v)))
    if len(dates) != len(v):
        raise ValueError(f"{len(dates)} dates for {len(v)} account values")
    r = daily_returns(v)
    b = rb = None
    ir = None
    if benchmark_values is not None:
        b = np.asarray(benchmark_values, dtype=np.float64)
        if b.shape != v.shape:
            raise ValueError(f"benchmark has {b.size} values, account has {v.size}")
        rb = daily_returns(b)
        ir = information_ratio(r, rb)
    try:
        rr = rachev(r, tail)
    except ValueError:
        rr = None
    return BacktestReport(dates, v, b, r, rb, float(v[-1] / v[0] - 1.0), ir, cvar(r, alpha), rr, alpha)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_report_csv(report: BacktestReport, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for t, d in enumerate(report.dates):
            w.writerow([
                d.isoformat() if isinstance(d, date) else d,
                _fmt(report.values[t]),
                _fmt(None if report.benchmark_values is None else report.benchmark_values[t]),
                _fmt(None if t == 0 else report.returns[t - 1]),
                _fmt(None if t == 0 or report.benchmark_returns is None else report.benchmark_returns[t - 1]),
            ])


def read_report_csv(path: str | Path, alpha: float = 0.05, tail: float = 0.05) -> BacktestReport:
    path = Path(path)
    if not path.exists():
        raise DataError(f"report not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"empty report: {path}")
    dates = [date.fromisoformat(r["date"]) for r in rows]
    values = [float(r["account_value"]) for r in rows]
    bench = None
    if all(r["benchmark_value"] for r in rows):
        bench = [float(r["benchmark_value"]) for r in rows]
    return make_report(values, bench, dates, alpha, tail)


def write_metrics_json(report: BacktestReport, path: str | Path, extra: dict | None = None) -> None:
    doc = {**report.metrics(), "information_ratio_basis": "daily", "cvar_alpha": report.alpha}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_benchmark(path: str | Path, dates: Sequence[date], ticker: str | None = None) -> np.ndarray:
    """Closing prices of one benchmark series on exactly ``dates``."""
    bars = load_price_csv(path)
    tickers = sorted({b.ticker for b in bars})
    if ticker is None:
        if len(tickers) != 1:
            raise DataError(f"benchmark file holds {len(tickers)} tickers; choose one of {tickers}")
        ticker = tickers[0]
    closes = {b.date: b.close for b in bars if b.ticker == ticker}
    missing = [d for d in dates if d not in closes]
    if missing:
        raise DataError(f"benchmark {ticker} lacks {len(missing)} backtest dates (first {missing[0]})")
    return np.array([closes[d] for d in dates])
