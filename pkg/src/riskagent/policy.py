"""Actor-critic MLP with a diagonal Gaussian action head.

Two code paths share the same parameters: plain numpy for fast single-step
rollouts, and ``autodiff.Tensor`` graphs for losses that need gradients.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .autodiff import Tensor, as_tensor, grad, leaf
from .errors import CheckpointError, ConfigError

LOG_2PI = math.log(2.0 * math.pi)
SQUASH_MODES = ("clip", "tanh")
CHECKPOINT_FORMAT = "riskagent-policy"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyConfig:
    hidden: tuple[int, ...] = (64, 64)
    # "clip": tanh-squashed mean, sampled action clipped, density of the pre-clip draw
    # "tanh": linear mean, action = tanh(draw), log-density with the tanh Jacobian
    squash: str = "clip"
    init_log_std: float = 0.0
    output_scale: float = 0.01

    def __post_init__(self):
        if self.squash not in SQUASH_MODES:
            raise ConfigError(f"squash must be one of {SQUASH_MODES}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer sizes must be positive")


Layer = tuple[np.ndarray, np.ndarray]


@dataclass
class PolicyParams:
    actor: list[Layer]
    critic: list[Layer]
    log_std: np.ndarray

    def __post_init__(self):
        for name, layers in (("actor", self.actor), ("critic", self.critic)):
            for k, (w, b) in enumerate(layers):
                if len(w.shape) != 2 or tuple(b.shape) != (w.shape[1],):
                    raise ValueError(f"{name} layer {k}: weight {w.shape} / bias {b.shape} mismatch")
                if k and layers[k - 1][0].shape[1] != w.shape[0]:
                    raise ValueError(f"{name} layer {k} does not chain with layer {k - 1}")
        if self.critic[-1][0].shape[1] != 1:
            raise ValueError("critic must output a scalar")
        if self.actor[-1][0].shape[1] != self.log_std.shape[0]:
            raise ValueError("log_std length must match the action dimension")

    @property
    def obs_dim(self) -> int:
        return self.actor[0][0].shape[0]

    @property
    def act_dim(self) -> int:
        return self.log_std.shape[0]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in self.actor:
            out += [w, b]
        for w, b in self.critic:
            out += [w, b]
        out.append(self.log_std)
        return out

    def replaced(self, arrays: Sequence[np.ndarray]) -> "PolicyParams":
        arrays = list(arrays)
        na, nc = len(self.actor), len(self.critic)
        actor = [(arrays[2 * k], arrays[2 * k + 1]) for k in range(na)]
        off = 2 * na
        critic = [(arrays[off + 2 * k], arrays[off + 2 * k + 1]) for k in range(nc)]
        return PolicyParams(actor, critic, arrays[off + 2 * nc])

    def copy(self) -> "PolicyParams":
        return self.replaced([a.copy() for a in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_flat(self, vec: np.ndarray) -> "PolicyParams":
        out, pos = [], 0
        for a in self.arrays():
            out.append(np.array(vec[pos : pos + a.size]).reshape(a.shape))
            pos += a.size
        return self.replaced(out)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def equals(self, other: "PolicyParams") -> bool:
        mine, theirs = self.arrays(), other.arrays()
        return len(mine) == len(theirs) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(mine, theirs)
        )


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, scale: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return scale * q[:rows, :cols]


def _mlp(rng, sizes: Sequence[int], output_scale: float) -> list[Layer]:
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if k == len(sizes) - 2:
            w = _orthogonal(rng, fan_in, fan_out, output_scale)
        else:
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return layers


def init_params(obs_dim: int, act_dim: int, cfg: PolicyConfig = PolicyConfig(),
                rng: np.random.Generator | int = 0) -> PolicyParams:
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    actor = _mlp(rng, (obs_dim, *cfg.hidden, act_dim), cfg.output_scale)
    critic = _mlp(rng, (obs_dim, *cfg.hidden, 1), cfg.output_scale)
    return PolicyParams(actor, critic, np.full(act_dim, float(cfg.init_log_std)))


# --------------------------------------------------------------------------
# numpy path


@dataclass(frozen=True)
class ActionDistribution:
    mean: np.ndarray
    std: np.ndarray
    squash: str = "clip"

    @property
    def log_std(self) -> np.ndarray:
        return np.log(self.std)


def _check_obs(params: PolicyParams, obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != params.obs_dim:
        raise ValueError(f"observation length {obs.shape[-1]} != policy input size {params.obs_dim}")
    return obs


def _run(layers: list[Layer], x: np.ndarray) -> np.ndarray:
    for w, b in layers[:-1]:
        x = np.tanh(x @ w + b)
    w, b = layers[-1]
    return x @ w + b


def forward(params: PolicyParams, obs, squash: str = "clip") -> tuple[ActionDistribution, np.ndarray]:
    """Action distribution and state value for one observation or a batch."""
    obs = _check_obs(params, obs)
    out = _run(params.actor, obs)
    mean = np.tanh(out) if squash == "clip" else out
    value = _run(params.critic, obs)[..., 0]
    std = np.broadcast_to(np.exp(params.log_std), mean.shape)
    return ActionDistribution(mean, std, squash), value


def value(params: PolicyParams, obs) -> np.ndarray:
    return _run(params.critic, _check_obs(params, obs))[..., 0]


def _tanh_log_jacobian(raw: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u))
    return (2.0 * (math.log(2.0) - raw - np.logaddexp(0.0, -2.0 * raw))).sum(axis=-1)


def log_prob(dist: ActionDistribution, raw_action) -> np.ndarray:
    """Diagonal-Gaussian log density of the pre-squash draw."""
    raw = np.asarray(raw_action, dtype=np.float64)
    z = (raw - dist.mean) / dist.std
    n = dist.mean.shape[-1]
    lp = -0.5 * (z * z).sum(axis=-1) - np.log(dist.std).sum(axis=-1) - 0.5 * n * LOG_2PI
    if dist.squash == "tanh":
        lp = lp - _tanh_log_jacobian(raw)
    return lp


def squash_action(raw: np.ndarray, squash: str = "clip") -> np.ndarray:
    return np.clip(raw, -1.0, 1.0) if squash == "clip" else np.tanh(raw)


def deterministic_action(dist: ActionDistribution) -> np.ndarray:
    return squash_action(dist.mean, dist.squash)


def sample_action(dist: ActionDistribution, rng: np.random.Generator):
    """Draw ``raw = mean + std * z``; returns ``(action, log_prob, raw)``.

    ``action`` is the squashed draw sent to the market; ``log_prob`` is the
    density of ``raw``, which is what the ratio in the loss is built from.
    """
    raw = dist.mean + dist.std * rng.standard_normal(dist.mean.shape)
    return squash_action(raw, dist.squash), log_prob(dist, raw), raw


def entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + LOG_2PI))


class FastPolicy:
    """Single-observation forward pass with minimal numpy call overhead."""

    def __init__(self, params: PolicyParams, squash: str = "clip"):
        self.actor = [(w, b) for w, b in params.actor]
        self.critic = [(w, b) for w, b in params.critic]
        self.std = np.exp(params.log_std)
        self.log_std_sum = float(np.sum(params.log_std))
        self.squash = squash
        self.n = params.act_dim
        self.obs_dim = params.obs_dim
        self._const = self.log_std_sum + 0.5 * self.n * LOG_2PI

    def act(self, obs: np.ndarray, rng: np.random.Generator):
        """``(action, raw, log_prob, value)`` for one observation."""
        mean = _run(self.actor, obs)
        if self.squash == "clip":
            mean = np.tanh(mean)
        v = float(_run(self.critic, obs)[0])
        z = rng.standard_normal(self.n)
        raw = mean + self.std * z
        lp = -0.5 * float(z @ z) - self._const
        if self.squash == "clip":
            action = np.clip(raw, -1.0, 1.0)
        else:
            action = np.tanh(raw)
            lp -= float(_tanh_log_jacobian(raw))
        return action, raw, lp, v

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        # both squash modes map the mean through tanh
        return np.tanh(_run(self.actor, obs))

    def value(self, obs: np.ndarray) -> float:
        return float(_run(self.critic, obs)[0])


# --------------------------------------------------------------------------
# differentiable path


@dataclass
class ParamLeaves:
    """Differentiable copies of every parameter array."""

    params: PolicyParams
    leaves: list[Tensor] = field(init=False)

    def __post_init__(self):
        self.leaves = [leaf(a) for a in self.params.arrays()]

    @property
    def structured(self) -> PolicyParams:
        return self.params.replaced(self.leaves)  # type: ignore[arg-type]

    def gradients(self, loss: Tensor) -> PolicyParams:
        return self.params.replaced(grad(loss, self.leaves))


def _run_graph(layers, x) -> Tensor:
    for w, b in layers[:-1]:
        x = (x @ w + b).tanh()
    w, b = layers[-1]
    return x @ w + b


def graph_forward(params: PolicyParams, obs: np.ndarray, squash: str = "clip"):
    """Differentiable ``(mean, log_std, value)`` for a batch of observations.

    ``params`` entries may be ``Tensor`` leaves or plain arrays (constants).
    """
    actor = [(as_tensor(w), as_tensor(b)) for w, b in params.actor]
    critic = [(as_tensor(w), as_tensor(b)) for w, b in params.critic]
    x = Tensor(obs)
    out = _run_graph(actor, x)
    mean = out.tanh() if squash == "clip" else out
    value = _run_graph(critic, x)[:, 0]
    return mean, as_tensor(params.log_std), value


def graph_actor(params: PolicyParams, obs: np.ndarray, squash: str = "clip"):
    """Differentiable ``(mean, log_std)`` only, skipping the critic."""
    actor = [(as_tensor(w), as_tensor(b)) for w, b in params.actor]
    out = _run_graph(actor, Tensor(obs))
    mean = out.tanh() if squash == "clip" else out
    return mean, as_tensor(params.log_std)


def graph_log_prob(mean: Tensor, log_std: Tensor, raw: np.ndarray, squash: str = "clip") -> Tensor:
    """Per-row log density; the tanh Jacobian term is constant in the parameters."""
    z = (Tensor(raw) - mean) / log_std.exp()
    n = raw.shape[-1]
    lp = z.square().sum(axis=1) * -0.5 - log_std.sum() - 0.5 * n * LOG_2PI
    if squash == "tanh":
        lp = lp - _tanh_log_jacobian(raw)
    return lp


def graph_entropy(log_std: Tensor) -> Tensor:
    n = log_std.shape[0]
    return log_std.sum() + 0.5 * n * (1.0 + LOG_2PI)


def gradient(loss_fn, params: PolicyParams) -> PolicyParams:
    """Exact reverse-mode gradient of ``loss_fn(structured_params) -> Tensor``.

    ``loss_fn`` receives a ``PolicyParams`` whose arrays are ``Tensor`` leaves.
    """
    leaves = ParamLeaves(params)
    loss = loss_fn(leaves.structured)
    if isinstance(loss, Tensor) and loss.data.size != 1:
        raise ValueError(f"gradient needs a scalar loss, got shape {loss.shape}")
    return leaves.gradients(loss)


def finite_difference(loss_value, params: PolicyParams, h: float = 1e-5) -> PolicyParams:
    """Central differences of ``loss_value(PolicyParams) -> float`` per entry."""
    base = params.flat()
    out = np.empty_like(base)
    for j in range(base.size):
        bumped = base.copy()
        bumped[j] = base[j] + h
        up = loss_value(params.from_flat(bumped))
        bumped[j] = base[j] - h
        down = loss_value(params.from_flat(bumped))
        out[j] = (up - down) / (2.0 * h)
    return params.from_flat(out)


def max_relative_error(analytic: PolicyParams, numeric: PolicyParams, floor: float = 1e-6) -> float:
    a, n = analytic.flat(), numeric.flat()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


# --------------------------------------------------------------------------
# optimiser


class Adam:
    def __init__(self, params: PolicyParams, lr: float = 3e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, max_grad_norm: float | None = None):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.max_grad_norm = max_grad_norm
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, params: PolicyParams, grads: PolicyParams) -> float:
        """Update ``params`` in place; returns the pre-clipping gradient norm."""
        gs = grads.arrays()
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in gs))
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            scale = self.max_grad_norm / (norm + 1e-12)
            gs = [g * scale for g in gs]
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params.arrays(), gs, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm


# --------------------------------------------------------------------------
# checkpoints


def _encode(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}


def _decode(obj: dict, where: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        arr = np.array(obj["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError):
        raise CheckpointError(f"{where}: malformed array entry") from None
    if arr.size != int(np.prod(shape)):
        raise CheckpointError(f"{where}: {arr.size} values do not fill shape {shape}")
    return arr.reshape(shape)


def save_checkpoint(path: str | Path, params: PolicyParams, meta: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "obs_dim": params.obs_dim,
        "act_dim": params.act_dim,
        "meta": meta or {},
        "actor": [{"weight": _encode(w), "bias": _encode(b)} for w, b in params.actor],
        "critic": [{"weight": _encode(w), "bias": _encode(b)} for w, b in params.critic],
        "log_std": _encode(params.log_std),
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[PolicyParams, dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc.msg})") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")

    def layers(name):
        return [(_decode(l["weight"], f"{name}[{k}].weight"), _decode(l["bias"], f"{name}[{k}].bias"))
                for k, l in enumerate(doc[name])]

    try:
        params = PolicyParams(layers("actor"), layers("critic"), _decode(doc["log_std"], "log_std"))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: inconsistent layer shapes ({exc})") from None
    return params, doc.get("meta", {})


def iter_layers(params: PolicyParams) -> Iterator[tuple[str, np.ndarray]]:
    for k, (w, b) in enumerate(params.actor):
        yield f"actor.{k}.weight", w
        yield f"actor.{k}.bias", b
    for k, (w, b) in enumerate(params.critic):
        yield f"critic.{k}.weight", w
        yield f"critic.{k}.bias", b
    yield "log_std", params.log_std
