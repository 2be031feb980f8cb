from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np


@dataclass
class StepResult:
    obs: np.ndarray  # (B, N, obs_dim)
    rewards: np.ndarray  # (B, N)
    alive: np.ndarray  # (B, N) bool, agents still acting after this step
    info: dict = field(default_factory=dict)


class MultiAgentEnv(Protocol):
    """N homogeneous agents, simulated for a batch of independent episodes.

    ``populations[n]`` names the policy population agent n belongs to.
    Continuous environments take joint actions shaped (B, N, action_size);
    discrete ones take integer actions shaped (B, N).
    """

    num_agents: int
    obs_dim: int
    action_kind: str  # "continuous" | "discrete"
    action_size: int
    populations: tuple[int, ...]

    def reset(self, rng: np.random.Generator, batch: int = 1) -> np.ndarray: ...

    def step(self, actions: np.ndarray) -> StepResult: ...

    def episode_stats(self) -> dict[str, np.ndarray]: ...


def point_mass_update(pos, vel, force, dt, damping, max_speed, world):
    """One damped point-mass step with speed limit and wall clamping.

    Returns (pos, vel, left_bounds) where left_bounds flags rows whose
    unclamped position fell outside [-world, world]^2.
    """
    vel = (1.0 - damping) * vel + force * dt
    speed = np.linalg.norm(vel, axis=-1, keepdims=True)
    too_fast = speed > max_speed
    vel = np.where(too_fast, vel * (max_speed / np.where(too_fast, speed, 1.0)), vel)
    pos = pos + vel * dt
    outside = np.abs(pos) > world
    left = outside.any(axis=-1)
    pos = np.clip(pos, -world, world)
    vel = np.where(outside, 0.0, vel)
    return pos, vel, left


def pair_distances(pos: np.ndarray) -> np.ndarray:
    """(B, N, N) Euclidean distances between agents."""
    diff = pos[:, :, None, :] - pos[:, None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))
