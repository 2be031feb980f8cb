"""Returns, the linear feature baseline and the REINFORCE estimator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import policy as pol

ALL_THETA = "all-theta"
ADAPTED = "adapted"


@dataclass
class Trajectory:
    """One episode for all N agents.

    ``alive[t, n]`` is True when agent n chose ``actions[t, n]``; steps after
    an agent dies stay in the arrays with zero reward and are masked out.
    """

    obs: np.ndarray  # (T, N, obs_dim)
    actions: np.ndarray  # (T, N, action_dim) continuous, (T, N) discrete
    rewards: np.ndarray  # (T, N)
    logp: np.ndarray  # (T, N)
    alive: np.ndarray  # (T, N) bool
    horizon: int
    tag: str = ALL_THETA
    adapted_agent: int | None = None
    stats: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        T = self.rewards.shape[0]
        for name in ("obs", "actions", "logp", "alive"):
            if getattr(self, name).shape[0] != T:
                raise ValueError(f"trajectory field {name} has length {getattr(self, name).shape[0]}, expected {T}")
        if (self.tag == ALL_THETA) != (self.adapted_agent is None):
            raise ValueError("tag and adapted_agent disagree")
        if T > self.horizon:
            raise ValueError("trajectory longer than its horizon")

    def __len__(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_agents(self) -> int:
        return self.rewards.shape[1]

    def episode_returns(self) -> np.ndarray:
        """Undiscounted per-agent returns."""
        return self.rewards.sum(axis=0)


def discounted_returns(rewards: Sequence[float], gamma: float) -> tuple[np.ndarray, float]:
    """Reward-to-go G_t = r_t + gamma G_{t+1} and the total R = G_0."""
    r = np.asarray(rewards, dtype=np.float64)
    G = np.zeros_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        G[t] = acc
    return G, float(G[0]) if len(r) else 0.0


@dataclass
class LinearBaseline:
    weights: np.ndarray
    horizon: int

    @staticmethod
    def features(obs: np.ndarray, t: np.ndarray, horizon: int) -> np.ndarray:
        obs = np.atleast_2d(obs)
        s = np.asarray(t, dtype=np.float64).reshape(-1, 1) / horizon
        return np.concatenate([obs, obs * obs, s, s ** 2, s ** 3, np.ones_like(s)], axis=1)

    def predict(self, obs: np.ndarray, t: np.ndarray) -> np.ndarray:
        return self.features(obs, t, self.horizon) @ self.weights


@dataclass
class AgentSamples:
    obs: np.ndarray
    actions: np.ndarray
    returns: np.ndarray  # reward-to-go at each kept step
    totals: np.ndarray  # the episode's total discounted return at each kept step
    t: np.ndarray
    episode: np.ndarray  # index of the source trajectory


def agent_samples(trajectories: Sequence[Trajectory], agent: int, gamma: float) -> AgentSamples:
    """The steps where `agent` acted, concatenated over trajectories."""
    parts = []
    for k, tr in enumerate(trajectories):
        G, R = discounted_returns(tr.rewards[:, agent], gamma)
        keep = np.flatnonzero(tr.alive[:, agent])
        parts.append((tr.obs[keep, agent], tr.actions[keep, agent], G[keep], np.full(len(keep), R), keep,
                      np.full(len(keep), k)))
    cols = list(zip(*parts))
    return AgentSamples(*(np.concatenate(c) for c in cols))


def fit_baseline(trajectories: Sequence[Trajectory], agent: int, gamma: float = 0.99,
                 reg: float = 1e-5) -> LinearBaseline:
    """Ridge regression of reward-to-go onto the baseline features, fitted from scratch.

    The bias column is left unpenalized so constant returns are fitted exactly.
    """
    if not trajectories:
        raise ValueError("fit_baseline needs at least one trajectory")
    horizon = trajectories[0].horizon
    s = agent_samples(trajectories, agent, gamma)
    F = LinearBaseline.features(s.obs, s.t, horizon)
    penalty = np.sqrt(reg) * np.eye(F.shape[1])[:-1]
    A = np.vstack([F, penalty])
    y = np.concatenate([s.returns, np.zeros(len(penalty))])
    w, *_ = np.linalg.lstsq(A, y, rcond=None)
    return LinearBaseline(w, horizon)


def advantages(samples: AgentSamples, baseline: LinearBaseline | None, trajectory_level_returns: bool = False,
               normalize: bool = False) -> np.ndarray:
    adv = samples.totals.copy() if trajectory_level_returns else samples.returns.copy()
    if baseline is not None:
        adv -= baseline.predict(samples.obs, samples.t)
    if normalize and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv


def reinforce_gradient(trajectories: Sequence[Trajectory], policy: pol.PolicySpec, params: np.ndarray, agent: int,
                       baseline: LinearBaseline | None = None, gamma: float = 0.99, *,
                       trajectory_level_returns: bool = False, normalize_advantages: bool = False,
                       step_average: bool = False,
                       extra_score: Sequence[tuple[int, np.ndarray]] = ()) -> np.ndarray:
    """Score-function gradient of agent `agent`'s expected return.

    With the defaults this is (1/|trajs|) sum_traj sum_t grad log pi(a_t|s_t) (G_t - b(s_t, t)).
    ``step_average`` divides by the number of scored steps instead of the
    number of trajectories; ``normalize_advantages`` standardizes the
    advantages over the batch.  ``extra_score`` lists (other_agent, params)
    pairs whose own action factors are scored with agent's advantages.
    """
    if not trajectories:
        raise ValueError("reinforce_gradient needs at least one trajectory")
    s = agent_samples(trajectories, agent, gamma)
    adv = advantages(s, baseline, trajectory_level_returns, normalize_advantages)
    grad = pol.weighted_score(policy, params, s.obs, s.actions, adv) if len(adv) else np.zeros(policy.num_params)
    if extra_score:
        lookup = {}
        for i, (k, t) in enumerate(zip(s.episode, s.t)):
            lookup[(int(k), int(t))] = adv[i]
        for other, other_params in extra_score:
            rows = [(k, t) for k, tr in enumerate(trajectories) for t in np.flatnonzero(tr.alive[:, other])
                    if (k, int(t)) in lookup]
            if not rows:
                continue
            obs = np.stack([trajectories[k].obs[t, other] for k, t in rows])
            act = np.stack([trajectories[k].actions[t, other] for k, t in rows])
            w = np.array([lookup[(k, int(t))] for k, t in rows])
            grad = grad + pol.weighted_score(policy, other_params, obs, act, w)
    denom = max(len(adv), 1) if step_average else len(trajectories)
    return grad / denom


def estimate_loss(trajectories: Sequence[Trajectory], agent: int, gamma: float = 0.99) -> float:
    """Monte-Carlo estimate of agent's expected total discounted return."""
    if not trajectories:
        raise ValueError("estimate_loss needs at least one trajectory")
    return float(np.mean([discounted_returns(tr.rewards[:, agent], gamma)[1] for tr in trajectories]))
