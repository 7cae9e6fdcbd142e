"""Daily long-only multi-asset trading environment.

``reset``/``step`` are pure functions over an immutable ``MarketState``;
``TradingEnv`` is a thin stateful wrapper used for rollouts.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .data import PricePanel, normalized_indicators
from .errors import ConfigError, EnvError
from .infusion import SignalGrid


@dataclass(frozen=True)
class EnvConfig:
    initial_cash: float = 1e6
    hmax: int = 100
    cost_rate: float = 0.001
    reward_scaling: float = 1e-4
    # None: an episode runs to the end of the panel
    episode_length: Optional[int] = None
    # draw episode starts uniformly instead of always starting at day 0
    random_start: bool = False

    def __post_init__(self):
        if self.hmax < 1:
            raise ConfigError("hmax must be >= 1")
        if not (0.0 <= self.cost_rate <= 0.05):
            raise ConfigError("cost_rate must lie in [0, 0.05]")
        if self.reward_scaling <= 0:
            raise ConfigError("reward_scaling must be positive")
        if self.initial_cash <= 0:
            raise ConfigError("initial_cash must be positive")
        if self.episode_length is not None and self.episode_length < 1:
            raise ConfigError("episode_length must be >= 1")


def observation_size(n_tickers: int, n_indicators: int, with_signals: bool) -> int:
    return 1 + 2 * n_tickers + n_indicators * n_tickers + (2 * n_tickers if with_signals else 0)


@dataclass(frozen=True, eq=False)
class MarketState:
    t: int
    cash: float
    holdings: np.ndarray
    prices: np.ndarray
    observation: np.ndarray
    end: int
    done: bool = False

    @property
    def value(self) -> float:
        return portfolio_value(self)


def portfolio_value(state: MarketState) -> float:
    return float(state.cash + np.dot(state.holdings, state.prices))


class _Features:
    """Per-panel observation blocks, computed once."""

    def __init__(self, panel: PricePanel):
        close = panel.close
        self.price = close / close[0] - 1.0
        ind = normalized_indicators(panel)
        self.indicators = ind.reshape(panel.n_days, -1)


_feature_cache: "weakref.WeakKeyDictionary[PricePanel, _Features]" = weakref.WeakKeyDictionary()


def _features(panel: PricePanel) -> _Features:
    feats = _feature_cache.get(panel)
    if feats is None:
        feats = _feature_cache[panel] = _Features(panel)
    return feats


def build_observation(panel: PricePanel, t: int, cash: float, holdings: np.ndarray,
                      signals: SignalGrid | None = None) -> np.ndarray:
    feats = _features(panel)
    prices = panel.close[t]
    position = holdings * prices
    value = cash + position.sum()
    parts = [np.array([cash / value]), position / value, feats.price[t], feats.indicators[t]]
    if signals is not None:
        parts.append(_signal_row(signals, t))
    return np.concatenate(parts)


def _signal_row(signals: SignalGrid, t: int) -> np.ndarray:
    return np.concatenate([(signals.sentiment[t] - 3) / 2.0, (signals.risk[t] - 3) / 2.0])


def reset(panel: PricePanel, cfg: EnvConfig, start: int = 0,
          signals: SignalGrid | None = None) -> MarketState:
    if not (0 <= start < panel.n_days - 1):
        raise EnvError(f"start day {start} outside [0, {panel.n_days - 2}]")
    end = panel.n_days - 1
    if cfg.episode_length is not None:
        end = min(end, start + cfg.episode_length)
    holdings = np.zeros(panel.n_tickers)
    cash = float(cfg.initial_cash)
    obs = build_observation(panel, start, cash, holdings, signals)
    return MarketState(start, cash, holdings, panel.close[start], obs, end)


def step(state: MarketState, action, panel: PricePanel, cfg: EnvConfig,
         signals: SignalGrid | None = None) -> tuple[MarketState, float, bool]:
    """Execute sells then buys at today's close, then move to tomorrow.

    reward = (V_{t+1} - V_t) * reward_scaling, costs included.
    """
    if state.done:
        raise EnvError("step() called on a finished episode; call reset()")
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (panel.n_tickers,):
        raise EnvError(f"action shape {a.shape} != ({panel.n_tickers},)")
    if not np.all(np.isfinite(a)):
        raise EnvError("action has non-finite components")
    a = np.clip(a, -1.0, 1.0)
    value_before = portfolio_value(state)
    cash, holdings, _ = kernels.execute_trades(
        state.cash, state.holdings, state.prices, a, float(cfg.hmax), cfg.cost_rate
    )
    t = state.t + 1
    prices = panel.close[t]
    done = t >= state.end
    obs = build_observation(panel, t, cash, holdings, signals)
    new = MarketState(t, cash, holdings, prices, obs, state.end, done)
    reward = (portfolio_value(new) - value_before) * cfg.reward_scaling
    return new, reward, done


class TradingEnv:
    """Sequential environment instance; counts every step taken."""

    def __init__(self, panel: PricePanel, cfg: EnvConfig = EnvConfig(),
                 signals: SignalGrid | None = None, seed: int = 0,
                 observe_signals: bool | None = None):
        if panel.n_days < 2:
            raise EnvError("panel needs at least 2 trading days")
        self.panel = panel
        self.cfg = cfg
        self.signals = signals
        self.observe_signals = signals is not None if observe_signals is None else observe_signals
        if self.observe_signals and signals is None:
            raise EnvError("observe_signals requires a SignalGrid")
        self._obs_signals = signals if self.observe_signals else None
        self.rng = np.random.default_rng(seed)
        self.state: MarketState | None = None
        self.total_steps = 0

    @property
    def n_tickers(self) -> int:
        return self.panel.n_tickers

    @property
    def observation_size(self) -> int:
        return observation_size(self.panel.n_tickers, len(self.panel.indicator_names),
                                self.observe_signals)

    def reset(self, start: int | None = None) -> np.ndarray:
        if start is None:
            start = 0
            if self.cfg.random_start:
                horizon = self.cfg.episode_length or 1
                start = int(self.rng.integers(0, max(1, self.panel.n_days - horizon)))
        self.state = reset(self.panel, self.cfg, start, self._obs_signals)
        return self.state.observation

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise EnvError("reset() before step()")
        self.state, reward, done = step(self.state, action, self.panel, self.cfg, self._obs_signals)
        self.total_steps += 1
        return self.state.observation, reward, done

    def today_scores(self) -> tuple[np.ndarray, np.ndarray] | None:
        if self.signals is None or self.state is None:
            return None
        t = self.state.t
        return self.signals.sentiment[t], self.signals.risk[t]
