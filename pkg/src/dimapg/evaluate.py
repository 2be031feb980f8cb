"""Post-training evaluation in three deployment modes.

central   every agent plays the central parameters
adapted   every agent first adapts its own copy with the configured inner
          steps, then all adapted copies play together
finetune  parameters trained with the single-agent variant, deployed on
          every agent
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algorithm import Team, TrainConfig, adapt_agents, rollout_joint, stream

MODES = ("central", "adapted", "finetune")
# generator codes kept clear of the training codes
_EVAL, _EVAL_ADAPT = 10, 11


@dataclass
class EvalSummary:
    mode: str
    episodes: int
    mean_return: float
    min_agent_return: float
    min_agent_se: float
    stats: dict[str, float] = field(default_factory=dict)
    per_episode: list[dict] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [
            f"mode: {self.mode}",
            f"episodes: {self.episodes}",
            f"mean agent return: {self.mean_return:.4f}",
            f"min-agent return: {self.min_agent_return:.4f} (se {self.min_agent_se:.4f})",
        ]
        out += [f"{key}: {value:.4f}" for key, value in sorted(self.stats.items())]
        return out


def deployed_params(team: Team, thetas: Sequence[np.ndarray], mode: str, config: TrainConfig, seed: int,
                    single_agent: bool = False) -> list[np.ndarray]:
    """Per-agent parameters for the given evaluation mode."""
    if mode not in MODES:
        raise ValueError(f"unknown evaluation mode {mode!r} (expected one of {MODES})")
    if mode == "finetune" and not single_agent:
        raise ValueError("finetune mode needs a checkpoint trained with the single-agent variant")
    if mode != "adapted":
        return team.assignment(thetas)
    agents = list(range(team.num_agents))
    adapted = adapt_agents(team, thetas, agents, config, lambda j: stream(seed, j, _EVAL_ADAPT))
    return team.assignment(thetas, {ad.agent: ad.params for ad in adapted})


def evaluate(team: Team, thetas: Sequence[np.ndarray], mode: str, episodes: int, config: TrainConfig,
             seed: int = 0, single_agent: bool = False) -> EvalSummary:
    """Play `episodes` episodes; the min-agent return is taken per episode, then averaged."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    assignment = deployed_params(team, thetas, mode, config, seed, single_agent)
    trajs = rollout_joint(team, assignment, config.horizon, stream(seed, 0, _EVAL), episodes)
    returns = np.stack([tr.episode_returns() for tr in trajs])
    mins = returns.min(axis=1)
    per_episode = [
        {"episode": i, "mean_return": float(r.mean()), "min_agent_return": float(m), **tr.stats}
        for i, (r, m, tr) in enumerate(zip(returns, mins, trajs))
    ]
    keys = sorted(trajs[0].stats)
    stats = {key: float(np.mean([tr.stats[key] for tr in trajs])) for key in keys}
    se = float(mins.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0
    return EvalSummary(mode, episodes, float(returns.mean()), float(mins.mean()), se, stats, per_episode)


def write_eval_csv(path, summary: EvalSummary) -> None:
    columns = ["episode", "mean_return", "min_agent_return", *sorted(summary.stats)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in summary.per_episode:
            writer.writerow([row[c] if c == "episode" else repr(float(row[c])) for c in columns])
