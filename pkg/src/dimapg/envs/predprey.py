"""Predator-prey with static disc obstacles; predators come first in agent order."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .base import StepResult, point_mass_update


@dataclass(frozen=True)
class PredPreyConfig:
    n_predators: int = 3
    n_prey: int = 1
    n_obstacles: int = 2
    obstacle_radius: float = 0.15
    prey_speed: float = 1.3
    team_reward: bool = False
    dt: float = 0.1
    damping: float = 0.25
    max_speed: float = 1.0
    collision_dist: float = 0.1
    world: float = 1.0


@dataclass
class PredPreyState:
    pos: np.ndarray  # (B, N, 2)
    vel: np.ndarray  # (B, N, 2)
    obstacles: np.ndarray  # (B, K, 2) centers
    collisions: np.ndarray  # (B,) predator-prey contacts accumulated since reset


def _speed_scale(cfg: PredPreyConfig) -> np.ndarray:
    return np.concatenate([np.ones(cfg.n_predators), np.full(cfg.n_prey, cfg.prey_speed)])[:, None]


def predprey_reset(cfg: PredPreyConfig, rng: np.random.Generator, batch: int = 1) -> PredPreyState:
    n = cfg.n_predators + cfg.n_prey
    w = cfg.world
    obstacles = rng.uniform(-0.7 * w, 0.7 * w, size=(batch, cfg.n_obstacles, 2))
    pos = rng.uniform(-w, w, size=(batch, n, 2))
    # resample spawns until no agent starts inside (or touching) an obstacle
    for _ in range(1000):
        d = np.linalg.norm(pos[:, :, None, :] - obstacles[:, None, :, :], axis=-1)
        bad = (d < cfg.obstacle_radius + cfg.collision_dist).any(axis=-1)
        if not bad.any():
            break
        pos[bad] = rng.uniform(-w, w, size=(int(bad.sum()), 2))
    else:
        raise RuntimeError("could not place agents clear of obstacles")
    return PredPreyState(pos, np.zeros_like(pos), obstacles, np.zeros(batch))


def predprey_observe(cfg: PredPreyConfig, state: PredPreyState) -> np.ndarray:
    B, N, _ = state.pos.shape
    rel_obs = state.obstacles[:, None, :, :] - state.pos[:, :, None, :]  # (B, N, K, 2)
    rel_pos = state.pos[:, None, :, :] - state.pos[:, :, None, :]
    rel_vel = state.vel[:, None, :, :] - state.vel[:, :, None, :]
    others = ~np.eye(N, dtype=bool)
    rel = np.concatenate([rel_pos[:, others].reshape(B, N, N - 1, 2), rel_vel[:, others].reshape(B, N, N - 1, 2)],
                         axis=-1)
    return np.concatenate([state.pos, state.vel, rel_obs.reshape(B, N, -1), rel.reshape(B, N, -1)], axis=-1)


def _push_out_of_obstacles(cfg: PredPreyConfig, pos, vel, obstacles):
    for k in range(obstacles.shape[1]):
        d = pos - obstacles[:, None, k, :]
        dist = np.linalg.norm(d, axis=-1, keepdims=True)
        inside = dist < cfg.obstacle_radius
        if not inside.any():
            continue
        normal = np.where(dist > 0, d / np.where(dist > 0, dist, 1.0), np.array([1.0, 0.0]))
        pos = np.where(inside, obstacles[:, None, k, :] + normal * cfg.obstacle_radius, pos)
        inward = (vel * normal).sum(axis=-1, keepdims=True)
        vel = np.where(inside & (inward < 0), vel - inward * normal, vel)
    return pos, vel


def predprey_rewards(cfg: PredPreyConfig, pos: np.ndarray):
    """Per-agent clipped rewards and the number of predator-prey contacts per episode."""
    P = cfg.n_predators
    d = np.linalg.norm(pos[:, :P, None, :] - pos[:, None, P:, :], axis=-1)  # (B, P, Q)
    touch = d < cfg.collision_dist
    contacts = touch.sum(axis=(1, 2))
    if cfg.team_reward:
        pred = np.repeat(contacts[:, None], P, axis=1).astype(np.float64)
    else:
        pred = touch.sum(axis=2).astype(np.float64)
    prey = -touch.sum(axis=1).astype(np.float64)
    return np.clip(np.concatenate([pred, prey], axis=1), -1.0, 1.0), contacts


def predprey_step(cfg: PredPreyConfig, state: PredPreyState, actions: np.ndarray):
    """Returns (next_state, observations, rewards)."""
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != state.pos.shape:
        raise ValueError(f"joint action has shape {actions.shape}, expected {state.pos.shape}")
    scale = _speed_scale(cfg)
    force = np.clip(actions, -1.0, 1.0) * scale
    pos, vel, _ = point_mass_update(state.pos, state.vel, force, cfg.dt, cfg.damping, cfg.max_speed * scale,
                                    cfg.world)
    pos, vel = _push_out_of_obstacles(cfg, pos, vel, state.obstacles)
    rewards, contacts = predprey_rewards(cfg, pos)
    nxt = PredPreyState(pos, vel, state.obstacles, state.collisions + contacts)
    return nxt, predprey_observe(cfg, nxt), rewards


class PredPreyEnv:
    action_kind = "continuous"
    action_size = 2

    def __init__(self, config: PredPreyConfig | None = None, **overrides):
        self.config = replace(config or PredPreyConfig(), **overrides)
        c = self.config
        self.num_agents = c.n_predators + c.n_prey
        self.obs_dim = 4 + 2 * c.n_obstacles + 4 * (self.num_agents - 1)
        self.populations = (0,) * c.n_predators + (1,) * c.n_prey
        self.state: PredPreyState | None = None

    def reset(self, rng: np.random.Generator, batch: int = 1) -> np.ndarray:
        self.state = predprey_reset(self.config, rng, batch)
        return predprey_observe(self.config, self.state)

    def step(self, actions: np.ndarray) -> StepResult:
        self.state, obs, rewards = predprey_step(self.config, self.state, actions)
        return StepResult(obs, rewards, np.ones(rewards.shape, dtype=bool))

    def episode_stats(self) -> dict[str, np.ndarray]:
        return {"collisions": self.state.collisions.copy()}
