"""Distributed multi-agent policy gradient training.

Each iteration every sampled agent adapts a private copy of the central
parameters with a few REINFORCE steps while the rest of the team stays on the
central policy.  The central parameters then take one ascent step on the sum
of two score-function terms: one over trajectories played with the adapted
copy, one over trajectories played entirely by the central policy, both
weighted by the adapted agent's return.  Afterwards every copy is reset to
the new central parameters.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from . import pg
from . import policy as pol
from .envs.base import MultiAgentEnv

log = logging.getLogger(__name__)

# stream codes for the per-(iteration, agent) generators
_PRE, _INNER, _POST, _PRE_B, _SAMPLE, _SINGLE = range(6)


@dataclass(frozen=True)
class TrainConfig:
    alpha1: float = 0.01
    alpha2: float = 0.01
    epsilon: float = 0.05
    k: int = 3
    n_traj: int = 25
    horizon: int = 200
    gamma: float = 0.99
    iterations: int = 100
    seed: int = 0
    first_order: bool = True
    agents_per_iter: int = 0  # 0 adapts every agent in the environment
    average_agents: bool = False
    fresh_pre_trajectories: bool = False
    score_all_agents: bool = False
    trajectory_level_returns: bool = False
    baseline: bool = True  # fit the linear feature baseline on every batch
    normalize_advantages: bool = True
    step_average: bool = True
    variant: str = "dimapg"  # "dimapg" | "single_agent"
    # subtract last iteration's per-population mean post loss from term B's weight
    term_b_offset: bool = True
    hvp_eps: float = 1e-5

    def __post_init__(self) -> None:
        if self.alpha1 < 0 or self.alpha2 < 0 or self.epsilon <= 0:
            raise ValueError("step sizes must be non-negative (epsilon strictly positive)")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.n_traj < 1 or self.horizon < 1:
            raise ValueError("n_traj and horizon must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.variant not in ("dimapg", "single_agent"):
            raise ValueError(f"unknown training variant {self.variant!r}")

    def estimator_kwargs(self) -> dict:
        return dict(trajectory_level_returns=self.trajectory_level_returns,
                    normalize_advantages=self.normalize_advantages, step_average=self.step_average)


@dataclass
class Team:
    """An environment plus one policy architecture per population."""

    env: MultiAgentEnv
    policies: tuple[pol.PolicySpec, ...]

    def __post_init__(self) -> None:
        self.policies = tuple(self.policies)
        pops = self.populations
        if len(pops) != self.env.num_agents or max(pops) >= len(self.policies):
            raise ValueError("every agent must map to exactly one population policy")
        for p in self.policies:
            if p.obs_dim != self.env.obs_dim:
                raise ValueError(f"policy expects {p.obs_dim} observation features, env provides {self.env.obs_dim}")

    @property
    def num_agents(self) -> int:
        return self.env.num_agents

    @property
    def populations(self) -> tuple[int, ...]:
        return tuple(self.env.populations)

    @property
    def num_populations(self) -> int:
        return len(self.policies)

    def policy_of(self, agent: int) -> pol.PolicySpec:
        return self.policies[self.populations[agent]]

    def assignment(self, thetas: Sequence[np.ndarray], overrides: dict[int, np.ndarray] | None = None):
        """Parameter vector each agent plays with: its population's theta unless overridden."""
        out = [thetas[p] for p in self.populations]
        for agent, params in (overrides or {}).items():
            out[agent] = params
        return out

    def same_population(self, agent: int) -> list[int]:
        pops = self.populations
        return [m for m in range(self.num_agents) if pops[m] == pops[agent]]


def make_team(env: MultiAgentEnv, hidden=(100, 100), activation: str = "relu", initial_log_std: float = 0.0) -> Team:
    n_pops = max(env.populations) + 1
    spec = pol.make_policy(env.obs_dim, env.action_kind, env.action_size, hidden, activation, initial_log_std)
    return Team(env, (spec,) * n_pops)


def stream(seed: int, iteration: int, code: int, agent: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, iteration, code, agent]))


def initial_thetas(team: Team, seed: int) -> list[np.ndarray]:
    return [pol.init_params(p, np.random.default_rng(np.random.SeedSequence([seed, 2 ** 31 - 1, i])))
            for i, p in enumerate(team.policies)]


def rollout_blocks(team: Team, blocks: Sequence[tuple[Sequence[np.ndarray], int | None]], horizon: int,
                   rng: np.random.Generator, episodes: int = 1) -> list[list[pg.Trajectory]]:
    """Play several parameter assignments side by side in one batched environment.

    Each block is (assignment, adapted_agent) and gets `episodes` episodes;
    agents sharing a parameter vector are evaluated in a single forward pass.
    """
    env = team.env
    N = team.num_agents
    pops = team.populations
    groups: dict[tuple[int, int], tuple[np.ndarray, list[int], list[int]]] = {}
    for bi, (assignment, _) in enumerate(blocks):
        if len(assignment) != N:
            raise ValueError(f"assignment covers {len(assignment)} agents, environment has {N}")
        for n, params in enumerate(assignment):
            _, eps, ags = groups.setdefault((id(params), pops[n]), (params, [], []))
            eps.extend(range(bi * episodes, (bi + 1) * episodes))
            ags.extend([n] * episodes)
    plan = [(params, team.policies[pop], np.array(eps), np.array(ags))
            for (_, pop), (params, eps, ags) in groups.items()]

    B = len(blocks) * episodes
    obs = env.reset(rng, B)
    if obs.shape[-1] != env.obs_dim:
        raise ValueError("environment returned observations of the wrong width")
    continuous = env.action_kind == "continuous"
    act_shape = (B, N, env.action_size) if continuous else (B, N)
    alive = np.ones((B, N), dtype=bool)
    rec_obs, rec_act, rec_rew, rec_logp, rec_alive = [], [], [], [], []
    for _ in range(horizon):
        actions = np.zeros(act_shape, dtype=np.float64 if continuous else np.int64)
        logp = np.zeros((B, N))
        for params, policy, eps, ags in plan:
            dist = pol.action_distribution(policy, params, obs[eps, ags])
            actions[eps, ags], logp[eps, ags] = pol.sample_and_logp(dist, rng)
        res = env.step(actions)
        rec_obs.append(obs)
        rec_act.append(actions)
        rec_rew.append(np.where(alive, res.rewards, 0.0))
        rec_logp.append(logp)
        rec_alive.append(alive)
        obs, alive = res.obs, res.alive & alive
        if not alive.any():
            break
    stats = env.episode_stats()
    arrays = [np.stack(x, axis=1) for x in (rec_obs, rec_act, rec_rew, rec_logp, rec_alive)]
    out = []
    for bi, (_, adapted_agent) in enumerate(blocks):
        tag = pg.ALL_THETA if adapted_agent is None else pg.ADAPTED
        out.append([
            pg.Trajectory(*(x[b] for x in arrays), horizon=horizon, tag=tag, adapted_agent=adapted_agent,
                          stats={key: float(v[b]) for key, v in stats.items()})
            for b in range(bi * episodes, (bi + 1) * episodes)
        ])
    return out


def rollout_joint(team: Team, assignment: Sequence[np.ndarray], horizon: int, rng: np.random.Generator,
                  episodes: int = 1, adapted_agent: int | None = None) -> list[pg.Trajectory]:
    """Play `episodes` episodes in lockstep with agent n acting from assignment[n]."""
    return rollout_blocks(team, [(assignment, adapted_agent)], horizon, rng, episodes)[0]


@dataclass
class InnerStep:
    """Fixed-sample surrogate of one inner gradient step (kept for second-order corrections)."""

    alpha: float
    obs: np.ndarray
    actions: np.ndarray
    weights: np.ndarray
    denom: float


@dataclass
class AdaptedParams:
    agent: int
    params: np.ndarray
    trace: list[np.ndarray]
    steps: list[InnerStep] = field(default_factory=list)


def _fitted_baseline(batch, agent, config: TrainConfig):
    return pg.fit_baseline(batch, agent, config.gamma) if config.baseline else None


def _estimator_step(batch, policy, params, agent, config: TrainConfig):
    baseline = _fitted_baseline(batch, agent, config)
    s = pg.agent_samples(batch, agent, config.gamma)
    w = pg.advantages(s, baseline, config.trajectory_level_returns, config.normalize_advantages)
    denom = max(len(w), 1) if config.step_average else len(batch)
    grad = pol.weighted_score(policy, params, s.obs, s.actions, w) / denom
    return grad, s, w, denom


def adapt_agents(team: Team, thetas: Sequence[np.ndarray], agents: Sequence[int], config: TrainConfig,
                 rngs: Callable[[int], np.random.Generator],
                 first_batch: Sequence[pg.Trajectory] | None = None) -> list[AdaptedParams]:
    """k REINFORCE steps on each agent's private copy while everyone else plays theta.

    Agents are adapted independently but their rollouts share one batched
    environment per inner step; `rngs(j)` supplies the generator for step j.
    `first_batch`, when given, must be all-theta trajectories and is reused for
    the first step instead of collecting a fresh batch.
    """
    results = {n: AdaptedParams(n, thetas[team.populations[n]].copy(), []) for n in agents}
    for ad in results.values():
        ad.trace.append(ad.params)
    for j in range(1, config.k + 1):
        alpha = config.alpha1 if j == 1 else config.alpha2
        if j == 1 and first_batch is not None:
            batches = [first_batch] * len(agents)
        else:
            blocks = [(team.assignment(thetas, {n: results[n].params}), None if j == 1 else n) for n in agents]
            batches = rollout_blocks(team, blocks, config.horizon, rngs(j), config.n_traj)
        for n, batch in zip(agents, batches):
            ad = results[n]
            grad, s, w, denom = _estimator_step(batch, team.policy_of(n), ad.params, n, config)
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError(f"non-finite inner gradient for agent {n} at step {j}")
            ad.steps.append(InnerStep(alpha, s.obs, s.actions, w, denom))
            ad.params = nn.add_scaled(ad.params, grad, alpha)
            ad.trace.append(ad.params)
    return [results[n] for n in agents]


def inner_adapt(team: Team, thetas: Sequence[np.ndarray], agent: int, config: TrainConfig,
                rng: np.random.Generator, first_batch: Sequence[pg.Trajectory] | None = None) -> AdaptedParams:
    """Adapt a single agent; see adapt_agents."""
    return adapt_agents(team, thetas, [agent], config, lambda j: rng, first_batch)[0]


def _surrogate_hvp(policy, point, step: InnerStep, v: np.ndarray, eps: float) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0:
        return np.zeros_like(v)
    h = eps / norm

    def g(p):
        return pol.weighted_score(policy, p, step.obs, step.actions, step.weights) / step.denom

    return (g(point + h * v) - g(point - h * v)) / (2 * h)


def second_order_correction(policy: pol.PolicySpec, adapted: AdaptedParams, grad_at_adapted: np.ndarray,
                            eps: float) -> np.ndarray:
    """Pull a gradient at theta_n back through the inner steps: prod_j (I + alpha_j H_j)."""
    v = grad_at_adapted
    for j in range(len(adapted.steps) - 1, -1, -1):
        step = adapted.steps[j]
        v = v + step.alpha * _surrogate_hvp(policy, adapted.trace[j], step, v, eps)
    return v


def _constant_weight_score(batch, policy, params, agent, weight, config: TrainConfig, extra=()):
    s = pg.agent_samples(batch, agent, config.gamma)
    total = pol.weighted_score(policy, params, s.obs, s.actions, np.full(len(s.t), weight))
    count = len(s.t)
    for other, other_params in extra:
        o = pg.agent_samples(batch, other, config.gamma)
        total = total + pol.weighted_score(policy, other_params, o.obs, o.actions, np.full(len(o.t), weight))
    denom = max(count, 1) if config.step_average else len(batch)
    return total / denom


def outer_gradient(team: Team, thetas: Sequence[np.ndarray], adapted: Sequence[AdaptedParams],
                   pre: Sequence[pg.Trajectory], post: dict[int, Sequence[pg.Trajectory]],
                   config: TrainConfig, offsets: Sequence[float] | None = None) -> list[np.ndarray]:
    """Per-population gradient of the summed agent objectives.

    For each adapted agent n:
      A = REINFORCE on the (theta, theta_n) trajectories, scored at theta_n
          and applied to theta directly (first-order) or pulled back through
          the inner steps (second-order);
      B = L_n(theta, theta_n) times agent n's score at theta on the all-theta
          trajectories, with L_n the mean discounted return of the post batch.

    `offsets[pop]` is subtracted from L_n.  It must not depend on `pre` (the
    previous iteration's losses qualify), so term B keeps its expectation
    while losing most of its variance.
    """
    if not pre:
        raise ValueError("outer_gradient needs the all-theta trajectories")
    grads = [np.zeros_like(t) for t in thetas]
    counts = [0] * len(thetas)
    for ad in sorted(adapted, key=lambda a: a.agent):
        n = ad.agent
        if n not in post or not post[n]:
            raise ValueError(f"missing post-adaptation trajectories for agent {n}")
        pop = team.populations[n]
        policy = team.policies[pop]
        batch = post[n]
        extra = [(m, thetas[pop]) for m in team.same_population(n) if m != n] if config.score_all_agents else []
        baseline = _fitted_baseline(batch, n, config)
        term_a = pg.reinforce_gradient(batch, policy, ad.params, n, baseline, config.gamma,
                                       extra_score=extra, **config.estimator_kwargs())
        if not config.first_order and ad.steps:
            term_a = second_order_correction(policy, ad, term_a, config.hvp_eps)
        weight = pg.estimate_loss(batch, n, config.gamma)
        if offsets is not None:
            weight -= offsets[pop]
        if config.normalize_advantages:
            # a batch with constant returns has no spread; |weight| then sets the scale
            spread = pg.agent_samples(batch, n, config.gamma).returns.std()
            scale = max(spread, abs(weight))
            weight = weight / scale if scale > 0 else 0.0
        term_b = _constant_weight_score(pre, policy, thetas[pop], n, weight, config, extra)
        grads[pop] += term_a + term_b
        counts[pop] += 1
    if config.average_agents:
        grads = [g / max(c, 1) for g, c in zip(grads, counts)]
    return grads


def central_update(theta: np.ndarray, grad: np.ndarray, epsilon: float) -> np.ndarray:
    new = nn.add_scaled(theta, grad, epsilon)
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("central update produced non-finite parameters")
    return new


def sample_agents(team: Team, config: TrainConfig, iteration: int) -> list[int]:
    N = team.num_agents
    if config.agents_per_iter <= 0 or config.agents_per_iter >= N:
        return list(range(N))
    rng = stream(config.seed, iteration, _SAMPLE)
    return sorted(int(a) for a in rng.choice(N, size=config.agents_per_iter, replace=False))


def episode_summary(trajectories: Sequence[pg.Trajectory]) -> tuple[float, float]:
    """(mean per-agent return, mean over episodes of the worst agent's return)."""
    returns = np.stack([tr.episode_returns() for tr in trajectories])
    return float(returns.mean()), float(returns.min(axis=1).mean())


METRIC_COLUMNS = ("iteration", "episodes", "mean_return", "min_agent_return", "loss_pre", "loss_post",
                  "grad_norm", "wallclock_s")


@dataclass
class TrainResult:
    thetas: list[np.ndarray]
    metrics: list[dict]
    initial: list[np.ndarray]


def population_losses(team: Team, post: dict[int, Sequence[pg.Trajectory]], gamma: float) -> list[float]:
    """Mean post-adaptation loss per population (0 for populations with no adapted agent)."""
    sums = np.zeros(team.num_populations)
    counts = np.zeros(team.num_populations)
    for n, batch in sorted(post.items()):
        sums[team.populations[n]] += pg.estimate_loss(batch, n, gamma)
        counts[team.populations[n]] += 1
    return [float(x) for x in np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)]


def dimapg_iteration(team: Team, thetas: list[np.ndarray], config: TrainConfig, iteration: int,
                     offsets: Sequence[float] | None = None):
    """One pass of sample / adapt / collect / consolidate.

    Returns (new thetas, metrics row, per-population post losses).
    """
    seed = config.seed
    agents = sample_agents(team, config, iteration)
    pre = rollout_joint(team, team.assignment(thetas), config.horizon, stream(seed, iteration, _PRE), config.n_traj)
    episodes = len(pre)
    pre_b = pre
    if config.fresh_pre_trajectories:
        pre_b = rollout_joint(team, team.assignment(thetas), config.horizon, stream(seed, iteration, _PRE_B),
                              config.n_traj)
        episodes += len(pre_b)
    try:
        adapted = adapt_agents(team, thetas, agents, config, lambda j: stream(seed, iteration, _INNER, j),
                               first_batch=pre)
    except FloatingPointError as exc:
        raise FloatingPointError(f"iteration {iteration}: {exc}") from exc
    blocks = [(team.assignment(thetas, {ad.agent: ad.params}), ad.agent) for ad in adapted]
    post = dict(zip(agents, rollout_blocks(team, blocks, config.horizon, stream(seed, iteration, _POST),
                                           config.n_traj)))
    episodes += len(agents) * config.n_traj * max(config.k, 1)
    grads = outer_gradient(team, thetas, adapted, pre_b, post, config,
                           offsets if config.term_b_offset else None)
    new = [central_update(t, g, config.epsilon) for t, g in zip(thetas, grads)]
    mean_ret, min_ret = episode_summary(pre)
    row = dict(
        episodes=episodes,
        mean_return=mean_ret,
        min_agent_return=min_ret,
        loss_pre=float(np.mean([pg.estimate_loss(pre, n, config.gamma) for n in agents])),
        loss_post=float(np.mean([pg.estimate_loss(post[n], n, config.gamma) for n in agents])),
        grad_norm=float(np.sqrt(sum(float(g @ g) for g in grads))),
    )
    return new, row, population_losses(team, post, config.gamma)


def single_agent_iteration(team: Team, thetas: list[np.ndarray], frozen: list[np.ndarray], config: TrainConfig,
                           iteration: int):
    """Train agent 0 alone while teammates replay the frozen initial policy."""
    others = {m: frozen[team.populations[m]] for m in range(1, team.num_agents)}
    batch = rollout_joint(team, team.assignment(thetas, others), config.horizon,
                          stream(config.seed, iteration, _SINGLE), config.n_traj,
                          adapted_agent=0 if team.num_agents > 1 else None)
    policy = team.policy_of(0)
    pop = team.populations[0]
    baseline = _fitted_baseline(batch, 0, config)
    grad = pg.reinforce_gradient(batch, policy, thetas[pop], 0, baseline, config.gamma, **config.estimator_kwargs())
    grads = [np.zeros_like(t) for t in thetas]
    grads[pop] = grad
    new = [central_update(t, g, config.epsilon) for t, g in zip(thetas, grads)]
    mean_ret, min_ret = episode_summary(batch)
    loss = pg.estimate_loss(batch, 0, config.gamma)
    row = dict(episodes=len(batch), mean_return=mean_ret, min_agent_return=min_ret, loss_pre=loss, loss_post=loss,
               grad_norm=float(np.linalg.norm(grad)))
    return new, row


def train(config: TrainConfig, team: Team, init: Sequence[np.ndarray] | None = None,
          callback: Callable[[int, list[np.ndarray], dict], None] | None = None) -> TrainResult:
    """Run `config.iterations` iterations; the metrics stream is returned and passed to `callback`."""
    thetas = [t.copy() for t in init] if init is not None else initial_thetas(team, config.seed)
    initial = [t.copy() for t in thetas]
    metrics = []
    offsets = None
    total_episodes = 0
    start = time.perf_counter()
    for it in range(config.iterations):
        if config.variant == "single_agent":
            thetas, row = single_agent_iteration(team, thetas, initial, config, it)
        else:
            thetas, row, offsets = dimapg_iteration(team, thetas, config, it, offsets)
        total_episodes += row["episodes"]
        row = {"iteration": it, **row, "episodes": total_episodes, "wallclock_s": time.perf_counter() - start}
        metrics.append(row)
        log.debug("iteration %d: min-agent return %.3f", it, row["min_agent_return"])
        if callback is not None:
            callback(it, thetas, row)
    return TrainResult(thetas, metrics, initial)
