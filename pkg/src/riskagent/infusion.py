"""Mapping LLM scores to the action multiplier S_f and the risk multiplier R_f."""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, DataError

MODES = ("none", "sentiment", "risk", "both")
APPLY_AT = ("train", "backtest", "both")
NEUTRAL = 3


@dataclass(frozen=True)
class InfusionConfig:
    mode: str = "none"
    strength: float = 0.10
    apply_at: str = "both"
    default_missing_score: int = NEUTRAL
    # append per-stock scores to the observation when infusion is on
    observe: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"infusion mode must be one of {MODES}, got {self.mode!r}")
        if self.apply_at not in APPLY_AT:
            raise ConfigError(f"apply_at must be one of {APPLY_AT}, got {self.apply_at!r}")
        if not (0.0 < self.strength <= 0.5):
            raise ConfigError(f"infusion strength must lie in (0, 0.5], got {self.strength}")
        if self.default_missing_score not in (1, 2, 3, 4, 5):
            raise ConfigError("default_missing_score must be in 1..5")

    @property
    def uses_sentiment(self) -> bool:
        return self.mode in ("sentiment", "both")

    @property
    def uses_risk(self) -> bool:
        return self.mode in ("risk", "both")

    @property
    def observes_signals(self) -> bool:
        return self.mode != "none" and self.observe

    def active(self, phase: str) -> bool:
        return self.mode != "none" and self.apply_at in (phase, "both")


def _check_score(score) -> int:
    if score not in (1, 2, 3, 4, 5):
        raise DataError(f"score {score!r} outside 1..5")
    return int(score)


def sentiment_factor(score: int, action_sign: float, strength: float = 0.10) -> float:
    """S_f for one stock: bullish scores amplify buys and damp sells, and vice versa."""
    score = _check_score(score)
    if action_sign == 0 or score == NEUTRAL:
        return 1.0
    step = strength if score in (1, 5) else strength / 2
    agrees = (score > NEUTRAL) == (action_sign > 0)
    return 1.0 + step if agrees else 1.0 - step


def _sentiment_table(strength: float) -> np.ndarray:
    # rows: score 1..5; cols: sign -, 0, +
    table = np.ones((6, 3))
    for score in range(1, 6):
        table[score, 0] = sentiment_factor(score, -1, strength)
        table[score, 2] = sentiment_factor(score, 1, strength)
    return table


def modulate_action(action, scores, strength: float = 0.10) -> np.ndarray:
    """Per-stock S_f * a_i, re-clipped to [-1, 1]."""
    a = np.asarray(action, dtype=np.float64)
    s = np.asarray(scores, dtype=np.int64)
    if np.any((s < 1) | (s > 5)):
        raise DataError("sentiment scores must lie in 1..5")
    factors = _sentiment_table(strength)[s, (np.sign(a) + 1).astype(np.int64)]
    return np.clip(factors * a, -1.0, 1.0)


def risk_factor(score: int, strength: float = 0.10) -> float:
    score = _check_score(score)
    return {5: 1.0 + strength, 4: 1.0 + strength / 2, 3: 1.0,
            2: 1.0 - strength / 2, 1: 1.0 - strength}[score]


def risk_factors(scores, strength: float = 0.10) -> np.ndarray:
    table = np.array([np.nan] + [risk_factor(k, strength) for k in range(1, 6)])
    s = np.asarray(scores, dtype=np.int64)
    if np.any((s < 1) | (s > 5)):
        raise DataError("risk scores must lie in 1..5")
    return table[s]


def portfolio_weights(state) -> np.ndarray:
    """Stock-value weights of the portfolio (cash excluded); uniform when flat."""
    return weights_from_positions(state.holdings, state.prices)


def weights_from_positions(holdings, prices) -> np.ndarray:
    values = np.asarray(holdings, dtype=np.float64) * np.asarray(prices, dtype=np.float64)
    total = values.sum()
    if total <= 0:
        return np.full(len(values), 1.0 / len(values))
    return values / total


def aggregate_risk(weights, factors) -> float:
    """R_f = sum_i w_i R_f^i."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
        raise DataError("portfolio weights must lie on the simplex")
    return float(np.dot(w, np.asarray(factors, dtype=np.float64)))


def adjust_return(total_return: float, risk_multiplier: float) -> float:
    if risk_multiplier <= 0:
        raise DataError("risk multiplier must be positive")
    return risk_multiplier * total_return


@dataclass(frozen=True, eq=False)
class SignalGrid:
    """T x N integer sentiment and risk scores aligned to a panel's calendar."""

    sentiment: np.ndarray
    risk: np.ndarray

    @classmethod
    def neutral(cls, n_days: int, n_tickers: int) -> "SignalGrid":
        grid = np.full((n_days, n_tickers), NEUTRAL, dtype=np.int64)
        return cls(grid, grid.copy())

    def window(self, lo: int, hi: int) -> "SignalGrid":
        return SignalGrid(self.sentiment[lo:hi], self.risk[lo:hi])

    def features(self) -> np.ndarray:
        """(T, 2N) observation block: scores mapped to [-1, 1]."""
        return np.concatenate([(self.sentiment - 3) / 2.0, (self.risk - 3) / 2.0], axis=1)


def score_grid(scores: Iterable, tickers, dates, default: int = NEUTRAL) -> SignalGrid:
    """Place scores on the trading calendar.

    A score dated on a non-trading day moves to the next trading day unless
    that day has its own score. Absent scores take ``default``.
    """
    dates = list(dates)
    col = {t: i for i, t in enumerate(tickers)}
    grids = {k: np.full((len(dates), len(col)), default, dtype=np.int64) for k in ("sentiment", "risk")}
    exact: set[tuple[str, int, int]] = set()
    shifted: dict[tuple[str, int, int], date] = {}
    for s in scores:
        i = col.get(s.ticker)
        if i is None:
            continue
        t = bisect.bisect_left(dates, s.date)
        if t >= len(dates):
            continue
        on_day = dates[t] == s.date
        for kind in ("sentiment", "risk"):
            value: Optional[int] = getattr(s, kind)
            if value is None:
                continue
            key = (kind, t, i)
            if on_day:
                exact.add(key)
                grids[kind][t, i] = value
            elif key not in exact and (key not in shifted or s.date > shifted[key]):
                shifted[key] = s.date
                grids[kind][t, i] = value
    return SignalGrid(grids["sentiment"], grids["risk"])
