"""Grid survival: many agents, a centered block of food, melee attacks.

Action indices (23 total):
    0..12   moves: stay, then the 12 cells at L1 distance 1..2 (world frame)
    13..20  attack one of the 8 Moore neighbours (world frame)
    21, 22  turn left / turn right

Headings are 0=N, 1=E, 2=S, 3=W with +y pointing south.  The 5x5 local view
is rotated so the agent's heading is "up".
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .base import StepResult

MOVES = ((0, 0), (0, -2), (-1, -1), (0, -1), (1, -1), (-2, 0), (-1, 0), (1, 0), (2, 0),
         (-1, 1), (0, 1), (1, 1), (0, 2))
ATTACKS = ((-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1))
TURN_LEFT, TURN_RIGHT = 21, 22
NUM_ACTIONS = len(MOVES) + len(ATTACKS) + 2
NO_ACTION = NUM_ACTIONS  # one-hot slot used before an agent has acted
VIEW = 5
CHANNELS = 3  # agents, food, wall
OBS_DIM = VIEW * VIEW * CHANNELS + (NUM_ACTIONS + 1) + 1 + 2 + 1


def _view_offsets() -> np.ndarray:
    """(4, 25, 2) world (dx, dy) offsets of each view cell, per heading."""
    out = np.zeros((4, VIEW * VIEW, 2), dtype=np.int64)
    half = VIEW // 2
    for h in range(4):
        i = 0
        for r in range(-half, half + 1):  # r < 0 is ahead of the agent
            for c in range(-half, half + 1):  # c > 0 is to its right
                out[h, i] = [(c, r), (-r, c), (-c, -r), (r, -c)][h]
                i += 1
    return out


VIEW_OFFSETS = _view_offsets()


@dataclass(frozen=True)
class SurvivalConfig:
    n_agents: int = 20
    width: int = 32
    height: int = 32
    n_food: int = 40
    hp: int = 2
    attack_damage: int = 1
    step_reward: float = -0.01
    death_reward: float = -1.0
    attack_penalty: float = -0.1
    group_attack_reward: float = 1.0
    food_reward: float = 5.0


@dataclass
class SurvivalState:
    pos: np.ndarray  # (N, 2) int cells as (x, y)
    heading: np.ndarray  # (N,)
    hp: np.ndarray  # (N,)
    alive: np.ndarray  # (N,) bool
    last_action: np.ndarray  # (N,)
    last_reward: np.ndarray  # (N,)
    food: np.ndarray  # (H, W) bool
    food_eaten: int = 0

    def copy(self) -> "SurvivalState":
        return SurvivalState(self.pos.copy(), self.heading.copy(), self.hp.copy(), self.alive.copy(),
                             self.last_action.copy(), self.last_reward.copy(), self.food.copy(), self.food_eaten)

    def occupancy(self) -> np.ndarray:
        occ = np.full(self.food.shape, -1, dtype=np.int64)
        idx = np.flatnonzero(self.alive)
        occ[self.pos[idx, 1], self.pos[idx, 0]] = idx
        return occ


def food_cells(width: int, height: int, count: int) -> np.ndarray:
    """The `count` cells closest to the grid center, ties broken row-major."""
    ys, xs = np.mgrid[0:height, 0:width]
    d2 = (xs - (width - 1) / 2.0) ** 2 + (ys - (height - 1) / 2.0) ** 2
    order = np.lexsort((xs.ravel(), ys.ravel(), d2.ravel()))
    food = np.zeros(height * width, dtype=bool)
    food[order[:count]] = True
    return food.reshape(height, width)


def survival_reset(cfg: SurvivalConfig, rng: np.random.Generator) -> SurvivalState:
    food = food_cells(cfg.width, cfg.height, cfg.n_food)
    free = np.flatnonzero(~food.ravel())
    if len(free) < cfg.n_agents:
        raise ValueError("grid too small for the requested agents and food")
    cells = rng.choice(free, size=cfg.n_agents, replace=False)
    pos = np.stack([cells % cfg.width, cells // cfg.width], axis=1).astype(np.int64)
    n = cfg.n_agents
    return SurvivalState(pos, np.zeros(n, dtype=np.int64), np.full(n, cfg.hp, dtype=np.int64),
                         np.ones(n, dtype=bool), np.full(n, NO_ACTION, dtype=np.int64), np.zeros(n), food)


def _padded_channels(state: SurvivalState, occ: np.ndarray) -> np.ndarray:
    half = VIEW // 2
    H, W = state.food.shape
    grid = np.zeros((H + 2 * half, W + 2 * half, CHANNELS))
    grid[:, :, 2] = 1.0
    inner = grid[half:half + H, half:half + W]
    inner[:, :, 0] = occ >= 0
    inner[:, :, 1] = state.food
    inner[:, :, 2] = 0.0
    return grid


def _non_spatial(cfg: SurvivalConfig, state: SurvivalState, agents: np.ndarray) -> np.ndarray:
    n = len(agents)
    tail = np.zeros((n, OBS_DIM - VIEW * VIEW * CHANNELS))
    tail[:, 0] = agents / cfg.n_agents
    tail[np.arange(n), 1 + state.last_action[agents]] = 1.0
    tail[:, NUM_ACTIONS + 2] = state.last_reward[agents]
    tail[:, NUM_ACTIONS + 3] = state.pos[agents, 0] / cfg.width
    tail[:, NUM_ACTIONS + 4] = state.pos[agents, 1] / cfg.height
    return tail


def observe_all(cfg: SurvivalConfig, state: SurvivalState) -> np.ndarray:
    """(N, OBS_DIM) observations; rows of dead agents are zero."""
    obs = np.zeros((cfg.n_agents, OBS_DIM))
    agents = np.flatnonzero(state.alive)
    if len(agents) == 0:
        return obs
    half = VIEW // 2
    grid = _padded_channels(state, state.occupancy())
    cells = state.pos[agents, None, :] + VIEW_OFFSETS[state.heading[agents]] + half  # (n, 25, 2)
    view = grid[cells[..., 1], cells[..., 0]]  # (n, 25, 3)
    view[:, (VIEW * VIEW) // 2, 0] = 0.0  # the agent itself
    obs[agents, :VIEW * VIEW * CHANNELS] = view.reshape(len(agents), -1)
    obs[agents, VIEW * VIEW * CHANNELS:] = _non_spatial(cfg, state, agents)
    return obs


def build_observation(cfg: SurvivalConfig, state: SurvivalState, agent: int) -> np.ndarray:
    if not state.alive[agent]:
        raise ValueError(f"agent {agent} is dead")
    return observe_all(cfg, state)[agent]


def _in_bounds(cfg: SurvivalConfig, x: int, y: int) -> bool:
    return 0 <= x < cfg.width and 0 <= y < cfg.height


def survival_step(cfg: SurvivalConfig, state: SurvivalState, actions):
    """Resolve turns, then simultaneous attacks, then moves in agent-index order.

    Returns (next_state, observations, rewards, diagnostics).  The input state
    is not modified.
    """
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    if actions.shape != (cfg.n_agents,):
        raise ValueError(f"expected {cfg.n_agents} actions, got {actions.shape}")
    s = state.copy()
    living = [int(i) for i in np.flatnonzero(s.alive)]
    for i in living:
        if not 0 <= actions[i] < NUM_ACTIONS:
            raise ValueError(f"action {actions[i]} of agent {i} out of range [0, {NUM_ACTIONS})")
    rewards = np.zeros(cfg.n_agents)
    rewards[living] = cfg.step_reward
    diag = {"ignored_dead_actions": int(cfg.n_agents - len(living)), "kills": 0, "food_eaten": 0}

    for i in living:
        a = actions[i]
        if a == TURN_LEFT:
            s.heading[i] = (s.heading[i] - 1) % 4
        elif a == TURN_RIGHT:
            s.heading[i] = (s.heading[i] + 1) % 4

    occ = s.occupancy()
    attackers: dict[int, list[int]] = {}
    for i in living:
        a = actions[i]
        if len(MOVES) <= a < len(MOVES) + len(ATTACKS):
            dx, dy = ATTACKS[a - len(MOVES)]
            x, y = s.pos[i, 0] + dx, s.pos[i, 1] + dy
            if _in_bounds(cfg, x, y) and occ[y, x] >= 0:
                attackers.setdefault(int(occ[y, x]), []).append(i)
    for target in sorted(attackers):
        group = attackers[target]
        bonus = cfg.group_attack_reward if len(group) >= 2 else cfg.attack_penalty
        for i in group:
            rewards[i] += bonus
        s.hp[target] -= cfg.attack_damage * len(group)
    for target in sorted(attackers):
        if s.alive[target] and s.hp[target] <= 0:
            s.alive[target] = False
            rewards[target] += cfg.death_reward
            occ[s.pos[target, 1], s.pos[target, 0]] = -1
            diag["kills"] += 1

    for i in living:
        a = actions[i]
        if not s.alive[i] or a == 0 or a >= len(MOVES):
            continue
        dx, dy = MOVES[a]
        x, y = s.pos[i, 0] + dx, s.pos[i, 1] + dy
        if not _in_bounds(cfg, x, y) or occ[y, x] >= 0:
            continue
        occ[s.pos[i, 1], s.pos[i, 0]] = -1
        occ[y, x] = i
        s.pos[i] = (x, y)
        if s.food[y, x]:
            s.food[y, x] = False
            s.food_eaten += 1
            rewards[i] += cfg.food_reward
            diag["food_eaten"] += 1

    s.last_action[living] = actions[living]
    s.last_reward[living] = rewards[living]
    return s, observe_all(cfg, s), rewards, diag


class SurvivalEnv:
    action_kind = "discrete"
    action_size = NUM_ACTIONS

    def __init__(self, config: SurvivalConfig | None = None, **overrides):
        self.config = replace(config or SurvivalConfig(), **overrides)
        self.num_agents = self.config.n_agents
        self.obs_dim = OBS_DIM
        self.populations = (0,) * self.num_agents
        self.states: list[SurvivalState] = []

    def reset(self, rng: np.random.Generator, batch: int = 1) -> np.ndarray:
        self.states = [survival_reset(self.config, rng) for _ in range(batch)]
        return np.stack([observe_all(self.config, s) for s in self.states])

    def step(self, actions: np.ndarray) -> StepResult:
        actions = np.asarray(actions)
        obs, rewards, diags = [], [], []
        for b, st in enumerate(self.states):
            st, o, r, d = survival_step(self.config, st, actions[b])
            self.states[b] = st
            obs.append(o)
            rewards.append(r)
            diags.append(d)
        alive = np.stack([s.alive for s in self.states])
        return StepResult(np.stack(obs), np.stack(rewards), alive, {"diagnostics": diags})

    def episode_stats(self) -> dict[str, np.ndarray]:
        return {
            "food_left": np.array([s.food.sum() for s in self.states], dtype=np.float64),
            "survivors": np.array([s.alive.sum() for s in self.states], dtype=np.float64),
        }
