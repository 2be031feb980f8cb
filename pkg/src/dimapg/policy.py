"""Stochastic policies over a flat parameter vector.

A Gaussian policy appends a state-independent log-std vector after the
network parameters; a categorical policy reads logits straight off the
network output.  Everything accepts either a single observation or a batch
of observations stacked as rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PolicySpec:
    net: nn.MlpSpec
    head: str  # "gaussian" | "categorical"
    initial_log_std: float = 0.0

    def __post_init__(self) -> None:
        if self.head not in ("gaussian", "categorical"):
            raise ValueError(f"unknown policy head {self.head!r}")

    @property
    def action_dim(self) -> int:
        return self.net.output_dim

    @property
    def num_params(self) -> int:
        extra = self.net.output_dim if self.head == "gaussian" else 0
        return self.net.num_params + extra

    @property
    def obs_dim(self) -> int:
        return self.net.input_dim


def make_policy(obs_dim: int, action_kind: str, action_size: int, hidden=(100, 100),
                activation: str = "relu", initial_log_std: float = 0.0) -> PolicySpec:
    head = "gaussian" if action_kind == "continuous" else "categorical"
    return PolicySpec(nn.MlpSpec(obs_dim, tuple(hidden), action_size, activation), head, initial_log_std)


def init_params(policy: PolicySpec, rng: np.random.Generator) -> np.ndarray:
    params = nn.init_params(policy.net, rng)
    if policy.head == "gaussian":
        params = np.concatenate([params, np.full(policy.action_dim, float(policy.initial_log_std))])
    return params


@dataclass
class Gaussian:
    mean: np.ndarray  # (action_dim,) or (B, action_dim)
    std: np.ndarray  # (action_dim,), shared by every row


@dataclass
class Categorical:
    probs: np.ndarray  # (num_actions,) or (B, num_actions)


def _split(policy: PolicySpec, params: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (policy.num_params,):
        raise ValueError(f"expected {policy.num_params} policy parameters, got shape {params.shape}")
    n = policy.net.num_params
    return params[:n], (params[n:] if policy.head == "gaussian" else None)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _distribution(policy: PolicySpec, params: np.ndarray, obs: np.ndarray):
    net_params, log_std = _split(policy, params)
    out, cache = nn.forward(policy.net, net_params, obs)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("policy network produced a non-finite output")
    if policy.head == "gaussian":
        return Gaussian(out, np.exp(log_std)), cache
    return Categorical(softmax(out)), cache


def action_distribution(policy: PolicySpec, params: np.ndarray, obs: np.ndarray) -> Gaussian | Categorical:
    return _distribution(policy, params, obs)[0]


def log_prob(dist: Gaussian | Categorical, action: np.ndarray) -> np.ndarray:
    if isinstance(dist, Gaussian):
        u = (np.asarray(action, dtype=np.float64) - dist.mean) / dist.std
        return -0.5 * np.sum(u * u, axis=-1) - np.sum(np.log(dist.std)) - 0.5 * dist.std.shape[-1] * LOG_2PI
    action = np.asarray(action)
    if dist.probs.ndim == 1:
        return np.log(dist.probs[int(action)])
    return np.log(dist.probs[np.arange(len(action)), action])


def sample_and_logp(dist: Gaussian | Categorical, rng: np.random.Generator):
    """Draw one action (per row) and return it with its exact log-probability."""
    if isinstance(dist, Gaussian):
        action = dist.mean + dist.std * rng.standard_normal(dist.mean.shape)
        return action, log_prob(dist, action)
    probs = dist.probs
    flat = probs.reshape(-1, probs.shape[-1])
    u = rng.random(flat.shape[0])
    cdf = np.cumsum(flat, axis=1)
    # inverse CDF; the min guards against u landing above a cdf that sums to 1 - ulp
    action = np.minimum((cdf < u[:, None]).sum(axis=1), flat.shape[1] - 1)
    if probs.ndim == 1:
        action = int(action[0])
    return action, log_prob(dist, action)


def _score_output_grad(policy: PolicySpec, dist, action: np.ndarray, weights: np.ndarray):
    """d(sum_i w_i log pi(a_i|s_i)) w.r.t. the network outputs, and w.r.t. log-std."""
    if policy.head == "gaussian":
        u = (action - dist.mean) / dist.std
        out_grad = weights[:, None] * u / dist.std
        log_std_grad = (weights[:, None] * (u * u - 1.0)).sum(axis=0)
        return out_grad, log_std_grad
    onehot = np.zeros_like(dist.probs)
    onehot[np.arange(len(action)), action] = 1.0
    return weights[:, None] * (onehot - dist.probs), None


def weighted_score(policy: PolicySpec, params: np.ndarray, obs: np.ndarray, actions: np.ndarray,
                   weights: np.ndarray) -> np.ndarray:
    """sum_i weights[i] * grad log pi(actions[i] | obs[i]) for a batch of rows."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if policy.head == "gaussian":
        actions = np.asarray(actions, dtype=np.float64).reshape(len(obs), policy.action_dim)
    else:
        actions = np.asarray(actions, dtype=np.int64).reshape(len(obs))
    if len(weights) != len(obs):
        raise ValueError("weights and observations differ in length")
    dist, cache = _distribution(policy, params, obs)
    out_grad, log_std_grad = _score_output_grad(policy, dist, actions, weights)
    net_params, _ = _split(policy, params)
    grad = nn.backward(policy.net, net_params, cache, out_grad)
    if log_std_grad is not None:
        grad = np.concatenate([grad, log_std_grad])
    return grad


def grad_log_prob(policy: PolicySpec, params: np.ndarray, obs: np.ndarray, action) -> np.ndarray:
    """Exact gradient of log pi(action | obs) w.r.t. every policy parameter."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise ValueError("grad_log_prob takes a single observation; use weighted_score for batches")
    return weighted_score(policy, params, obs[None, :], np.asarray(action)[None, ...], np.ones(1))
