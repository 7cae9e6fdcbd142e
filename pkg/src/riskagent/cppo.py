"""CVaR-constrained PPO.

The Lagrangian adds ``lam * g`` to the PPO loss, with

    g(eta) = 1/(1 - alpha) * mean[(eta - D_i)^+] - eta + beta

over per-episode returns ``D_i`` (risk-adjusted ``R_f * D_i`` when risk
infusion is on). ``alpha`` enters literally as written above: with
``alpha = 0.05`` the hinge weight is 1/0.95. To target the worst 5% tail in
the Rockafellar-Uryasev sense, configure ``alpha = 0.95``.

Collected returns do not depend on the policy parameters, so each episode's
hinge is weighted by its importance ratio (product of per-step ratios,
clipped to ``[1 - eps, 1 + eps]``), which equals 1 at the behaviour policy
and gives the penalty a bounded policy gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Tensor
from .env import TradingEnv
from .errors import ConfigError
from .infusion import InfusionConfig, adjust_return
from .policy import PolicyConfig, PolicyParams, graph_actor, graph_log_prob
from .ppo import Batch, Rollout, TrainConfig, TrainResult, ppo_loss, train


@dataclass(frozen=True)
class CvarConfig:
    alpha: float = 0.05
    beta: float = 0.01
    lambda_init: float = 0.0
    lambda_max: float = 10.0
    lambda_step: float = 0.1
    # None: start at the empirical 5th percentile of the first epoch's returns
    eta_init: Optional[float] = None
    eta_step: float = 0.05

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError("alpha must lie in (0, 1)")
        if self.lambda_max < 0 or not (0.0 <= self.lambda_init <= self.lambda_max):
            raise ConfigError("need 0 <= lambda_init <= lambda_max")
        if self.lambda_step < 0 or self.eta_step < 0:
            raise ConfigError("step sizes must be non-negative")


@dataclass
class CvarState:
    eta: float
    lam: float


def cvar_penalty(returns: Sequence[float], eta: float, alpha: float, beta: float) -> float:
    """g = 1/(1-alpha) * mean(max(0, eta - D)) - eta + beta."""
    d = np.asarray(returns, dtype=np.float64)
    if d.size == 0:
        raise ValueError("cvar_penalty needs at least one trajectory return")
    if alpha == 1.0:
        raise ZeroDivisionError("alpha = 1 makes the hinge weight 1/(1 - alpha) infinite")
    return float(np.mean(np.maximum(0.0, eta - d)) / (1.0 - alpha) - eta + beta)


def eta_subgradient(returns: Sequence[float], eta: float, alpha: float) -> float:
    d = np.asarray(returns, dtype=np.float64)
    return float(np.mean(d < eta) / (1.0 - alpha) - 1.0)


def update_eta(eta: float, returns: Sequence[float], alpha: float, step: float) -> float:
    """One subgradient-descent step on g with respect to eta."""
    if len(returns) == 0:
        raise ValueError("update_eta needs at least one trajectory return")
    return eta - step * eta_subgradient(returns, eta, alpha)


def update_lambda(lam: float, g: float, step: float, lam_max: float) -> float:
    """Projected dual ascent: clip(lam + step * g, 0, lam_max)."""
    return min(max(lam + step * g, 0.0), lam_max)


@dataclass
class PenaltyData:
    """Steps of the complete episodes in a collection window."""

    obs: np.ndarray
    raw_actions: np.ndarray
    old_log_probs: np.ndarray
    segment_ids: np.ndarray
    returns: np.ndarray  # one (risk-adjusted) D per episode

    n_total: Optional[int] = None  # episodes in the window when this is a subset

    @property
    def n_segments(self) -> int:
        return len(self.returns)

    def active(self, eta: float) -> "PenaltyData":
        """Only the episodes with a positive hinge at ``eta``.

        The others contribute neither value nor gradient, so the penalty
        computed on the subset (averaged over the full count) is unchanged.
        """
        keep = np.flatnonzero(self.returns < eta)
        rows = np.isin(self.segment_ids, keep)
        remap = np.full(self.n_segments, -1)
        remap[keep] = np.arange(keep.size)
        return PenaltyData(self.obs[rows], self.raw_actions[rows], self.old_log_probs[rows],
                           remap[self.segment_ids[rows]], self.returns[keep],
                           self.n_total if self.n_total is not None else self.n_segments)


def penalty_data(rollout: Rollout, risk_adjusted: bool) -> Optional[PenaltyData]:
    segs = rollout.complete_segments()
    if not segs:
        return None
    idx = np.concatenate([np.arange(s.start, s.stop) for s in segs])
    ids = np.concatenate([np.full(s.stop - s.start, k) for k, s in enumerate(segs)])
    d = np.array([
        adjust_return(s.total_return, s.mean_risk_multiplier) if risk_adjusted else s.total_return
        for s in segs
    ])
    return PenaltyData(rollout.obs[idx], rollout.raw_actions[idx], rollout.log_probs[idx], ids, d)


def graph_penalty(params: PolicyParams, data: PenaltyData, state: CvarState, cfg: CvarConfig,
                  clip_eps: float = 0.2, squash: str = "clip") -> Tensor:
    """Differentiable g with importance-weighted hinge terms."""
    n = data.n_total if data.n_total is not None else data.n_segments
    const = cfg.beta - state.eta
    if data.n_total is None:
        data = data.active(state.eta)
    if data.n_segments == 0:
        return Tensor(const)
    mean, log_std = graph_actor(params, data.obs, squash)
    logp = graph_log_prob(mean, log_std, data.raw_actions, squash)
    log_w = (logp - data.old_log_probs).segment_sum(data.segment_ids, data.n_segments)
    with np.errstate(over="ignore"):
        w = log_w.exp().clip(1.0 - clip_eps, 1.0 + clip_eps)
    hinge = np.maximum(0.0, state.eta - data.returns)
    return (w * hinge).sum() * (1.0 / ((1.0 - cfg.alpha) * n)) + const


def cppo_loss(batch: Batch, params: PolicyParams, state: CvarState, cfg: CvarConfig,
              penalty: Optional[PenaltyData], clip_eps: float = 0.2, vf_coef: float = 0.5,
              ent_coef: float = 0.01, squash: str = "clip") -> Tensor:
    """ppo_loss + lam * g; reduces to ppo_loss exactly when lam = 0."""
    total = ppo_loss(batch, params, None, clip_eps, vf_coef, ent_coef, squash).total
    if state.lam == 0.0 or penalty is None:
        return total
    return total + state.lam * graph_penalty(params, penalty, state, cfg, clip_eps, squash)


class CvarHook:
    """Carries (eta, lambda) through training and adds the penalty term."""

    def __init__(self, cfg: CvarConfig, risk_adjusted: bool = False):
        self.cfg = cfg
        self.risk_adjusted = risk_adjusted
        self.state = CvarState(cfg.eta_init if cfg.eta_init is not None else math.nan, cfg.lambda_init)
        self.data: Optional[PenaltyData] = None
        self._active: Optional[PenaltyData] = None
        self.trace: list[tuple[float, float]] = []

    def begin_epoch(self, rollout: Rollout) -> None:
        self.data = penalty_data(rollout, self.risk_adjusted)
        if self.data is not None and math.isnan(self.state.eta):
            self.state.eta = float(np.percentile(self.data.returns, 5))
        # eta is fixed until end_epoch, so the active set is too
        self._active = None if self.data is None else self.data.active(self.state.eta)

    def loss_term(self, params: PolicyParams, clip_eps: float, squash: str) -> Optional[Tensor]:
        if self.data is None or self.state.lam == 0.0:
            return None
        return self.state.lam * graph_penalty(params, self._active, self.state, self.cfg, clip_eps, squash)

    def end_epoch(self, rollout: Rollout) -> dict:
        cfg, st = self.cfg, self.state
        g = math.nan
        mean_rf = float(np.mean(rollout.risk_multipliers))
        if self.data is not None:
            d = self.data.returns
            st.eta = update_eta(st.eta, d, cfg.alpha, cfg.eta_step)
            g = cvar_penalty(d, st.eta, cfg.alpha, cfg.beta)
            st.lam = update_lambda(st.lam, g, cfg.lambda_step, cfg.lambda_max)
        self.trace.append((st.eta, st.lam))
        return {"eta": st.eta, "lambda": st.lam, "cvar_penalty": g, "mean_Rf": mean_rf}


def train_cppo(
    env_factory: Callable[[int], TradingEnv],
    cfg: TrainConfig = TrainConfig(),
    cvar_cfg: CvarConfig = CvarConfig(),
    infusion: InfusionConfig | None = None,
    policy_cfg: PolicyConfig = PolicyConfig(),
    **kw,
) -> TrainResult:
    """PPO loop with the CVaR Lagrangian; (eta, lambda) move once per epoch."""
    risk_adjusted = infusion is not None and infusion.uses_risk and infusion.active("train")
    hook = CvarHook(cvar_cfg, risk_adjusted)
    return train(env_factory, cfg, infusion, policy_cfg, hook=hook, **kw)
