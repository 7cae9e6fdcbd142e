"""Clipped-surrogate PPO: advantage estimation, loss, and the rollout/update loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Protocol

import numpy as np

from . import kernels
from .autodiff import Tensor, minimum
from .env import TradingEnv
from .errors import ConfigError
from .infusion import InfusionConfig, aggregate_risk, modulate_action, risk_factors, weights_from_positions
from .policy import (
    Adam,
    FastPolicy,
    ParamLeaves,
    PolicyConfig,
    PolicyParams,
    graph_entropy,
    graph_forward,
    graph_log_prob,
    init_params,
    save_checkpoint,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 25
    steps_per_epoch: int = 20000
    minibatch_size: int = 64
    update_passes: int = 10
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    learning_rate: float = 3e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_grad_norm: Optional[float] = 0.5
    normalize_advantages: bool = True
    checkpoint_every: int = 0
    seed: int = 42

    def __post_init__(self):
        if not (0.0 < self.clip_eps < 1.0):
            raise ConfigError("clip_eps must lie in (0, 1)")
        if not (0.0 < self.gamma <= 1.0) or not (0.0 < self.gae_lambda <= 1.0):
            raise ConfigError("gamma and gae_lambda must lie in (0, 1]")
        for name in ("epochs", "steps_per_epoch", "minibatch_size", "update_passes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


def compute_gae(rewards, values, last_value: float, gamma: float, lam: float, dones=None):
    """GAE(gamma, lambda) advantages and returns-to-go (advantages + values).

    ``dones[t]`` marks a terminal transition: no bootstrap past it.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("cannot estimate advantages of an empty trajectory")
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must be aligned")
    dones = np.zeros(len(rewards), dtype=bool) if dones is None else np.asarray(dones, dtype=bool)
    return kernels.gae(rewards, values, dones, float(last_value), float(gamma), float(lam))


@dataclass
class Batch:
    obs: np.ndarray
    raw_actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.obs)

    def subset(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.raw_actions[idx], self.old_log_probs[idx],
                     self.advantages[idx], self.returns[idx])


@dataclass
class LossTerms:
    total: Tensor
    surrogate: float
    value_loss: float
    entropy: float


def ppo_loss(batch: Batch, params: PolicyParams, old_log_probs=None, clip_eps: float = 0.2,
             vf_coef: float = 0.5, ent_coef: float = 0.01, squash: str = "clip") -> LossTerms:
    """-mean(min(r A, clip(r) A)) + vf_coef * mean((V - R)^2) - ent_coef * entropy.

    ``params`` may hold ``Tensor`` leaves (for gradients) or plain arrays.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    old = batch.old_log_probs if old_log_probs is None else np.asarray(old_log_probs)
    mean, log_std, value = graph_forward(params, batch.obs, squash)
    logp = graph_log_prob(mean, log_std, batch.raw_actions, squash)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = (logp - old).exp()
    bad = np.flatnonzero(~np.isfinite(ratio.data))
    if bad.size:
        raise FloatingPointError(f"non-finite probability ratio at sample {int(bad[0])}")
    adv = batch.advantages
    surrogate = minimum(ratio * adv, ratio.clip(1.0 - clip_eps, 1.0 + clip_eps) * adv).mean()
    value_loss = (value - batch.returns).square().mean()
    ent = graph_entropy(log_std)
    total = -surrogate + vf_coef * value_loss - ent_coef * ent
    return LossTerms(total, surrogate.item(), value_loss.item(), ent.item())


# --------------------------------------------------------------------------
# rollout collection


@dataclass
class Segment:
    """One episode's steps inside a collection window."""

    start: int
    stop: int
    total_return: float
    mean_risk_multiplier: float
    # started and finished inside this window
    complete: bool
    # episode terminated inside this window (total_return covers the whole episode)
    finished: bool = True


@dataclass
class Rollout:
    obs: np.ndarray
    raw_actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    risk_multipliers: np.ndarray
    last_value: float
    segments: list[Segment]
    advantages: np.ndarray = field(default=None)
    returns: np.ndarray = field(default=None)

    def batch(self) -> Batch:
        return Batch(self.obs, self.raw_actions, self.log_probs, self.advantages, self.returns)

    @property
    def episode_returns(self) -> list[float]:
        return [s.total_return for s in self.segments if s.finished]

    def complete_segments(self) -> list[Segment]:
        return [s for s in self.segments if s.complete]


class Collector:
    """Steps one environment with the current policy; episodes span epochs."""

    def __init__(self, env: TradingEnv, infusion: InfusionConfig | None, rng: np.random.Generator):
        self.env = env
        self.infusion = infusion if infusion is not None else InfusionConfig()
        self.modulate = self.infusion.active("train") and self.infusion.uses_sentiment
        self.track_risk = self.infusion.mode != "none" and self.infusion.uses_risk
        if (self.modulate or self.track_risk) and env.signals is None:
            raise ConfigError("infusion needs LLM scores (SignalGrid) on the environment")
        self.rng = rng
        self.obs = env.reset()
        self._seg_return = 0.0
        self._seg_risk = 0.0
        self._seg_len = 0

    def collect(self, params: PolicyParams, n_steps: int, squash: str = "clip") -> Rollout:
        env, fast = self.env, FastPolicy(params, squash)
        d = fast.obs_dim
        obs_buf = np.empty((n_steps, d))
        raw_buf = np.empty((n_steps, params.act_dim))
        logp_buf = np.empty(n_steps)
        val_buf = np.empty(n_steps)
        rew_buf = np.empty(n_steps)
        done_buf = np.zeros(n_steps, dtype=bool)
        rf_buf = np.ones(n_steps)
        segments: list[Segment] = []
        seg_start = 0
        seg_fresh = self._seg_len == 0
        strength = self.infusion.strength
        signals = env.signals
        obs = self.obs
        for t in range(n_steps):
            action, raw, lp, v = fast.act(obs, self.rng)
            state = env.state
            if self.modulate:
                action = modulate_action(action, signals.sentiment[state.t], strength)
            if self.track_risk:
                w = weights_from_positions(state.holdings, state.prices)
                rf_buf[t] = aggregate_risk(w, risk_factors(signals.risk[state.t], strength))
            obs_buf[t] = obs
            raw_buf[t] = raw
            logp_buf[t] = lp
            val_buf[t] = v
            obs, reward, done = env.step(action)
            rew_buf[t] = reward
            self._seg_return += reward
            self._seg_risk += rf_buf[t]
            self._seg_len += 1
            if done:
                done_buf[t] = True
                segments.append(Segment(seg_start, t + 1, self._seg_return,
                                        self._seg_risk / self._seg_len, seg_fresh))
                seg_start, seg_fresh = t + 1, True
                self._seg_return = self._seg_risk = 0.0
                self._seg_len = 0
                obs = env.reset()
        if seg_start < n_steps:
            segments.append(Segment(seg_start, n_steps, float(rew_buf[seg_start:].sum()),
                                    float(rf_buf[seg_start:].mean()), False, False))
        self.obs = obs
        last_value = 0.0 if done_buf[-1] else fast.value(obs)
        return Rollout(obs_buf, raw_buf, logp_buf, val_buf, rew_buf, done_buf, rf_buf,
                       last_value, segments)


# --------------------------------------------------------------------------
# training loop


class RiskHook(Protocol):
    """Extension points used by the CVaR-constrained trainer."""

    def begin_epoch(self, rollout: Rollout) -> None: ...

    def loss_term(self, params: PolicyParams, clip_eps: float, squash: str) -> Optional[Tensor]: ...

    def end_epoch(self, rollout: Rollout) -> dict: ...


LOG_COLUMNS = ("epoch", "env_steps", "mean_episode_return", "episodes", "surrogate_loss",
               "value_loss", "entropy", "wall_time")


@dataclass
class TrainResult:
    params: PolicyParams
    log: list[dict]
    env_steps: int
    hook: Optional[object] = None

    def write_log(self, path: str | Path) -> None:
        write_train_log(self.log, path)


def write_train_log(rows: list[dict], path: str | Path) -> None:
    if not rows:
        return
    cols = list(rows[0].keys())
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _seeds(seed: int) -> dict[str, np.random.Generator | int]:
    init_ss, act_ss, shuffle_ss, env_ss = np.random.SeedSequence(seed).spawn(4)
    return {
        "init": np.random.default_rng(init_ss),
        "act": np.random.default_rng(act_ss),
        "shuffle": np.random.default_rng(shuffle_ss),
        "env": int(env_ss.generate_state(1)[0]),
    }


def train(
    env_factory: Callable[[int], TradingEnv],
    cfg: TrainConfig = TrainConfig(),
    infusion: InfusionConfig | None = None,
    policy_cfg: PolicyConfig = PolicyConfig(),
    hook: RiskHook | None = None,
    checkpoint_dir: str | Path | None = None,
    checkpoint_meta: dict | None = None,
    initial_params: PolicyParams | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run ``cfg.epochs`` rounds of collect-then-update.

    ``env_factory(seed)`` builds the environment; every random stream is
    derived from ``cfg.seed``, so identical inputs give identical weights.
    """
    streams = _seeds(cfg.seed)
    env = env_factory(streams["env"])
    params = initial_params.copy() if initial_params is not None else init_params(
        env.observation_size, env.n_tickers, policy_cfg, streams["init"])
    if params.obs_dim != env.observation_size:
        raise ConfigError(f"policy expects {params.obs_dim} inputs, environment gives {env.observation_size}")
    opt = Adam(params, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps, cfg.max_grad_norm)
    collector = Collector(env, infusion, streams["act"])
    shuffle_rng = streams["shuffle"]
    squash = policy_cfg.squash
    log: list[dict] = []
    steps_before = env.total_steps
    t0 = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        ro = collector.collect(params, cfg.steps_per_epoch, squash)
        ro.advantages, ro.returns = compute_gae(ro.rewards, ro.values, ro.last_value,
                                                cfg.gamma, cfg.gae_lambda, ro.dones)
        batch = ro.batch()
        if cfg.normalize_advantages:
            adv = batch.advantages
            batch.advantages = (adv - adv.mean()) / (adv.std() + 1e-8)
        if hook is not None:
            hook.begin_epoch(ro)

        sums = np.zeros(3)
        count = 0
        n = len(batch)
        for _ in range(cfg.update_passes):
            perm = shuffle_rng.permutation(n)
            for lo in range(0, n, cfg.minibatch_size):
                mb = batch.subset(perm[lo : lo + cfg.minibatch_size])
                leaves = ParamLeaves(params)
                structured = leaves.structured
                terms = ppo_loss(mb, structured, None, cfg.clip_eps, cfg.vf_coef, cfg.ent_coef, squash)
                total = terms.total
                if hook is not None:
                    extra = hook.loss_term(structured, cfg.clip_eps, squash)
                    if extra is not None:
                        total = total + extra
                opt.step(params, leaves.gradients(total))
                sums += (terms.surrogate, terms.value_loss, terms.entropy)
                count += 1

        ep_returns = ro.episode_returns
        row = {
            "epoch": epoch,
            "env_steps": env.total_steps - steps_before,
            "mean_episode_return": float(np.mean(ep_returns)) if ep_returns else math.nan,
            "episodes": len(ep_returns),
            "surrogate_loss": float(-sums[0] / count),
            "value_loss": float(sums[1] / count),
            "entropy": float(sums[2] / count),
        }
        if hook is not None:
            row.update(hook.end_epoch(ro))
        row["wall_time"] = time.perf_counter() - t0
        log.append(row)
        if progress is not None:
            progress(row)
        logger.info("epoch %d: return %.4g, surrogate %.4g", epoch, row["mean_episode_return"],
                    row["surrogate_loss"])
        if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"checkpoint-epoch{epoch:04d}.json", params,
                            {**(checkpoint_meta or {}), "epoch": epoch})
        if not params.all_finite():
            raise FloatingPointError(f"non-finite parameters after epoch {epoch}")

    return TrainResult(params, log, env.total_steps - steps_before, hook)


def config_fields(cls) -> list[str]:
    return [f.name for f in fields(cls)]
