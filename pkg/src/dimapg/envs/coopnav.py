"""Cooperative navigation: N agents should cover N goals without colliding."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .base import StepResult, pair_distances, point_mass_update


@dataclass(frozen=True)
class CoopNavConfig:
    n_agents: int = 3
    dt: float = 0.1
    damping: float = 0.25
    max_speed: float = 1.0
    collision_dist: float = 0.1
    collision_penalty: float = 1.0
    boundary_penalty: float = 1.0
    world: float = 1.0


@dataclass
class CoopNavState:
    pos: np.ndarray  # (B, N, 2)
    vel: np.ndarray  # (B, N, 2)
    goals: np.ndarray  # (B, N, 2)

    def permuted(self, perm) -> "CoopNavState":
        perm = np.asarray(perm)
        return CoopNavState(self.pos[:, perm], self.vel[:, perm], self.goals.copy())


def coopnav_reset(cfg: CoopNavConfig, rng: np.random.Generator, batch: int = 1) -> CoopNavState:
    n, w = cfg.n_agents, cfg.world
    pos = rng.uniform(-w, w, size=(batch, n, 2))
    goals = rng.uniform(-w, w, size=(batch, n, 2))
    return CoopNavState(pos, np.zeros_like(pos), goals)


def coopnav_observe(state: CoopNavState) -> np.ndarray:
    """[own pos, own vel, goals - own pos, other agents' pos - own pos] per agent."""
    B, N, _ = state.pos.shape
    rel_goals = state.goals[:, None, :, :] - state.pos[:, :, None, :]  # (B, N, G, 2)
    rel_agents = state.pos[:, None, :, :] - state.pos[:, :, None, :]  # (B, N, N, 2)
    others = ~np.eye(N, dtype=bool)
    rel_others = rel_agents[:, others].reshape(B, N, N - 1, 2)
    return np.concatenate(
        [state.pos, state.vel, rel_goals.reshape(B, N, -1), rel_others.reshape(B, N, -1)], axis=-1
    )


def coopnav_rewards(cfg: CoopNavConfig, pos: np.ndarray, goals: np.ndarray, left: np.ndarray) -> np.ndarray:
    d2 = ((goals[:, :, None, :] - pos[:, None, :, :]) ** 2).sum(axis=-1)  # (B, G, N)
    shared = -d2.min(axis=2).sum(axis=1)  # (B,)
    N = pos.shape[1]
    touching = (pair_distances(pos) < cfg.collision_dist) & ~np.eye(N, dtype=bool)
    rewards = shared[:, None] - cfg.collision_penalty * touching.sum(axis=2) - cfg.boundary_penalty * left
    return np.clip(rewards, -1.0, 1.0)


def coopnav_step(cfg: CoopNavConfig, state: CoopNavState, actions: np.ndarray):
    """Advance every episode in the batch one step.

    Returns (next_state, observations, rewards).
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != state.pos.shape:
        raise ValueError(f"joint action has shape {actions.shape}, expected {state.pos.shape}")
    force = np.clip(actions, -1.0, 1.0)
    pos, vel, left = point_mass_update(state.pos, state.vel, force, cfg.dt, cfg.damping, cfg.max_speed, cfg.world)
    nxt = CoopNavState(pos, vel, state.goals)
    return nxt, coopnav_observe(nxt), coopnav_rewards(cfg, pos, state.goals, left)


class CoopNavEnv:
    action_kind = "continuous"
    action_size = 2

    def __init__(self, config: CoopNavConfig | None = None, **overrides):
        self.config = replace(config or CoopNavConfig(), **overrides)
        self.num_agents = self.config.n_agents
        self.obs_dim = 4 * self.num_agents + 2
        self.populations = (0,) * self.num_agents
        self.state: CoopNavState | None = None

    def reset(self, rng: np.random.Generator, batch: int = 1) -> np.ndarray:
        self.state = coopnav_reset(self.config, rng, batch)
        return coopnav_observe(self.state)

    def step(self, actions: np.ndarray) -> StepResult:
        self.state, obs, rewards = coopnav_step(self.config, self.state, actions)
        return StepResult(obs, rewards, np.ones(rewards.shape, dtype=bool))

    def episode_stats(self) -> dict[str, np.ndarray]:
        return {}
