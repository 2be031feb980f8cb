import dataclasses

import numpy as np
import pytest

from dimapg import pg
from dimapg import policy as pol
from dimapg.algorithm import (
    AdaptedParams,
    Team,
    TrainConfig,
    adapt_agents,
    central_update,
    dimapg_iteration,
    initial_thetas,
    inner_adapt,
    make_team,
    outer_gradient,
    rollout_blocks,
    rollout_joint,
    second_order_correction,
    stream,
    train,
)
from dimapg.envs import CoopNavEnv, PredPreyEnv, SurvivalEnv
from dimapg.oracle import TinyMDP, TinyMDPEnv, finite_diff_grad, tabular_policy

SMALL = dict(n_traj=3, horizon=8, k=2)


def small_team(n_agents=2, hidden=(8,)):
    return make_team(CoopNavEnv(n_agents=n_agents), hidden=hidden)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(k=-1)
    with pytest.raises(ValueError):
        TrainConfig(n_traj=0)
    with pytest.raises(ValueError):
        TrainConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        TrainConfig(variant="maml")
    assert TrainConfig(k=0).k == 0


def test_rollout_horizon_and_tag():
    team = small_team()
    thetas = initial_thetas(team, 0)
    trajs = rollout_joint(team, team.assignment(thetas), 3, np.random.default_rng(0), episodes=2)
    assert len(trajs) == 2
    assert all(len(tr) == 3 and tr.tag == pg.ALL_THETA for tr in trajs)
    adapted = rollout_joint(team, team.assignment(thetas, {1: thetas[0] + 0.1}), 3, np.random.default_rng(0),
                            adapted_agent=1)
    assert adapted[0].tag == pg.ADAPTED and adapted[0].adapted_agent == 1


def test_rollout_replay_bitwise():
    team = small_team()
    thetas = initial_thetas(team, 1)
    a = rollout_joint(team, team.assignment(thetas), 10, np.random.default_rng(5), 2)
    b = rollout_joint(team, team.assignment(thetas), 10, np.random.default_rng(5), 2)
    for x, y in zip(a, b):
        for field in ("obs", "actions", "rewards", "logp"):
            assert getattr(x, field).tobytes() == getattr(y, field).tobytes()


def test_rollout_logp_matches_policy():
    team = small_team()
    thetas = initial_thetas(team, 2)
    tr = rollout_joint(team, team.assignment(thetas), 4, np.random.default_rng(1))[0]
    spec = team.policies[0]
    for t in range(4):
        for n in range(2):
            dist = pol.action_distribution(spec, thetas[0], tr.obs[t, n])
            assert tr.logp[t, n] == pytest.approx(float(pol.log_prob(dist, tr.actions[t, n])), abs=1e-12)


def test_rollout_rejects_bad_assignment():
    team = small_team()
    with pytest.raises(ValueError):
        rollout_joint(team, initial_thetas(team, 0), 3, np.random.default_rng(0))


def test_rollout_blocks_split_episodes():
    team = small_team()
    thetas = initial_thetas(team, 0)
    blocks = [(team.assignment(thetas), None), (team.assignment(thetas, {0: thetas[0] * 0.5}), 0)]
    out = rollout_blocks(team, blocks, 4, np.random.default_rng(0), episodes=3)
    assert [len(b) for b in out] == [3, 3]
    assert out[1][0].adapted_agent == 0


def test_survival_rollout_stops_masking_dead_agents():
    team = make_team(SurvivalEnv(n_agents=4, width=6, height=6, n_food=4), hidden=(8,))
    thetas = initial_thetas(team, 0)
    trajs = rollout_joint(team, team.assignment(thetas), 40, np.random.default_rng(0), 2)
    for tr in trajs:
        dead = ~tr.alive
        assert np.all(tr.rewards[dead] == 0.0)
        assert set(tr.stats) == {"food_left", "survivors"}


def test_inner_adapt_identities():
    team = small_team()
    thetas = initial_thetas(team, 0)
    before = thetas[0].tobytes()
    for cfg in (TrainConfig(**{**SMALL, "k": 0}), TrainConfig(alpha1=0.0, alpha2=0.0, **SMALL)):
        ad = inner_adapt(team, thetas, 1, cfg, np.random.default_rng(0))
        assert ad.params.tobytes() == thetas[0].tobytes()
        assert ad.trace[0].tobytes() == thetas[0].tobytes()
        assert len(ad.trace) == cfg.k + 1
    assert thetas[0].tobytes() == before


def test_inner_adapt_moves_and_is_reproducible():
    team = small_team()
    thetas = initial_thetas(team, 0)
    cfg = TrainConfig(**SMALL)
    a = inner_adapt(team, thetas, 0, cfg, np.random.default_rng(3))
    b = inner_adapt(team, thetas, 0, cfg, np.random.default_rng(3))
    assert a.params.tobytes() == b.params.tobytes()
    assert not np.array_equal(a.params, thetas[0])
    assert a.trace[-1] is a.params


def test_inner_step_is_reinforce_on_fresh_rollouts():
    team = small_team()
    thetas = initial_thetas(team, 0)
    cfg = TrainConfig(**{**SMALL, "k": 1})
    ad = inner_adapt(team, thetas, 1, cfg, np.random.default_rng(4))
    batch = rollout_joint(team, team.assignment(thetas, {1: thetas[0].copy()}), cfg.horizon,
                          np.random.default_rng(4), cfg.n_traj)
    b = pg.fit_baseline(batch, 1, cfg.gamma)
    g = pg.reinforce_gradient(batch, team.policies[0], thetas[0], 1, b, cfg.gamma, **cfg.estimator_kwargs())
    assert np.allclose(ad.params, thetas[0] + cfg.alpha1 * g, rtol=0, atol=1e-14)


def test_lockstep_adaptation_matches_per_agent_steps():
    team = small_team(3)
    thetas = initial_thetas(team, 0)
    cfg = TrainConfig(**SMALL)
    pre = rollout_joint(team, team.assignment(thetas), cfg.horizon, np.random.default_rng(0), cfg.n_traj)
    together = adapt_agents(team, thetas, [0, 1, 2], cfg, lambda j: stream(0, 0, 1, j), first_batch=pre)
    for ad in together:
        assert len(ad.steps) == cfg.k
        assert ad.trace[0].tobytes() == thetas[0].tobytes()


def test_nonfinite_inner_gradient_raises():
    team = small_team()
    thetas = initial_thetas(team, 0)
    thetas[0][:] = np.nan
    with pytest.raises(FloatingPointError):
        inner_adapt(team, thetas, 0, TrainConfig(**SMALL), np.random.default_rng(0))


def _zero_reward_team():
    mdp = TinyMDP(np.full((2, 2, 2), 0.5), np.zeros((2, 2)), np.array([0.5, 0.5]), horizon=3)
    return mdp, Team(TinyMDPEnv(mdp), (tabular_policy(mdp),))


def test_outer_gradient_zero_returns():
    mdp, team = _zero_reward_team()
    theta = np.random.default_rng(0).normal(size=team.policies[0].num_params)
    cfg = TrainConfig(k=1, n_traj=4, horizon=3, term_b_offset=False)
    rng = np.random.default_rng(1)
    pre = rollout_joint(team, [theta], 3, rng, 4)
    ad = inner_adapt(team, [theta], 0, cfg, rng, first_batch=pre)
    post = rollout_joint(team, [ad.params], 3, rng, 4, adapted_agent=0)
    g = outer_gradient(team, [theta], [ad], pre, {0: post}, cfg)[0]
    assert np.array_equal(g, np.zeros_like(theta))


def test_outer_gradient_missing_sets():
    team = small_team()
    thetas = initial_thetas(team, 0)
    ad = AdaptedParams(0, thetas[0].copy(), [thetas[0].copy()])
    cfg = TrainConfig(**SMALL)
    with pytest.raises(ValueError):
        outer_gradient(team, thetas, [ad], [], {0: []}, cfg)
    pre = rollout_joint(team, team.assignment(thetas), 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        outer_gradient(team, thetas, [ad], pre, {}, cfg)


def _term_b(batch_pre, spec, theta, agent, weight, cfg):
    s = pg.agent_samples(batch_pre, agent, cfg.gamma)
    denom = len(s.t) if cfg.step_average else len(batch_pre)
    return pol.weighted_score(spec, theta, s.obs, s.actions, np.full(len(s.t), weight)) / denom


def test_k0_term_a_is_plain_reinforce():
    team = small_team()
    thetas = initial_thetas(team, 0)
    cfg = TrainConfig(**{**SMALL, "k": 0}, term_b_offset=False, normalize_advantages=False)
    rng = np.random.default_rng(2)
    pre = rollout_joint(team, team.assignment(thetas), cfg.horizon, rng, cfg.n_traj)
    ad = inner_adapt(team, thetas, 0, cfg, rng)
    post = rollout_joint(team, team.assignment(thetas, {0: ad.params}), cfg.horizon, rng, cfg.n_traj, 0)
    g = outer_gradient(team, thetas, [ad], pre, {0: post}, cfg)[0]
    spec = team.policies[0]
    b = pg.fit_baseline(post, 0, cfg.gamma)
    reinforce = pg.reinforce_gradient(post, spec, thetas[0], 0, b, cfg.gamma, **cfg.estimator_kwargs())
    term_b = _term_b(pre, spec, thetas[0], 0, pg.estimate_loss(post, 0, cfg.gamma), cfg)
    assert np.allclose(g, reinforce + term_b, rtol=1e-12, atol=1e-14)


def _one_iteration_inputs(team, cfg, seed=0):
    thetas = initial_thetas(team, seed)
    rng = np.random.default_rng(seed)
    pre = rollout_joint(team, team.assignment(thetas), cfg.horizon, rng, cfg.n_traj)
    adapted = adapt_agents(team, thetas, list(range(team.num_agents)), cfg, lambda j: stream(seed, 0, 1, j), pre)
    post = {ad.agent: rollout_joint(team, team.assignment(thetas, {ad.agent: ad.params}), cfg.horizon, rng,
                                    cfg.n_traj, ad.agent) for ad in adapted}
    return thetas, pre, adapted, post


@pytest.mark.parametrize("env_cls", [CoopNavEnv, PredPreyEnv])
def test_outer_gradient_additive_over_agents(env_cls):
    team = make_team(env_cls(), hidden=(8,))
    cfg = TrainConfig(**SMALL)
    thetas, pre, adapted, post = _one_iteration_inputs(team, cfg)
    offsets = [0.3] * team.num_populations
    batched = outer_gradient(team, thetas, adapted, pre, post, cfg, offsets)
    separate = [outer_gradient(team, thetas, [ad], pre, post, cfg, offsets) for ad in adapted]
    for pop in range(team.num_populations):
        total = sum(s[pop] for s in separate)
        assert np.allclose(batched[pop], total, rtol=1e-13, atol=1e-15)


def test_populations_receive_own_gradients():
    # dense rewards: two populations over a navigation environment
    env = CoopNavEnv(n_agents=3)
    env.populations = (0, 0, 1)
    team = make_team(env, hidden=(8,))
    cfg = TrainConfig(**SMALL)
    thetas, pre, adapted, post = _one_iteration_inputs(team, cfg)
    last_only = outer_gradient(team, thetas, [adapted[2]], pre, post, cfg)
    assert np.array_equal(last_only[0], np.zeros_like(thetas[0]))
    assert np.any(last_only[1] != 0)
    first_only = outer_gradient(team, thetas, [adapted[0]], pre, post, cfg)
    assert np.array_equal(first_only[1], np.zeros_like(thetas[1]))


def test_average_agents_divides_by_count():
    team = small_team(3)
    cfg = TrainConfig(**SMALL)
    thetas, pre, adapted, post = _one_iteration_inputs(team, cfg)
    summed = outer_gradient(team, thetas, adapted, pre, post, cfg)[0]
    averaged = outer_gradient(team, thetas, adapted, pre, post, dataclasses.replace(cfg, average_agents=True))[0]
    assert np.allclose(averaged * 3, summed, rtol=1e-13)


def test_offset_changes_only_term_b():
    team = small_team()
    cfg = TrainConfig(**SMALL, normalize_advantages=False)
    thetas, pre, adapted, post = _one_iteration_inputs(team, cfg)
    base = outer_gradient(team, thetas, adapted, pre, post, cfg, [0.0])[0]
    shifted = outer_gradient(team, thetas, adapted, pre, post, cfg, [2.0])[0]
    spec = team.policies[0]
    expected = sum(_term_b(pre, spec, thetas[0], ad.agent, -2.0, cfg) for ad in adapted)
    assert np.allclose(shifted - base, expected, rtol=1e-10, atol=1e-13)


def test_central_update_examples():
    assert np.array_equal(central_update(np.array([0.0]), np.array([1.0]), 0.05), [0.05])
    theta = np.array([1.0, -2.0])
    assert central_update(theta, np.zeros(2), 0.05).tobytes() == theta.tobytes()
    g = np.array([0.5, 0.25])
    twice = central_update(central_update(theta, g, 0.05), g, 0.05)
    assert np.allclose(twice, theta + 0.1 * g, rtol=1e-15)
    with pytest.raises(FloatingPointError):
        central_update(theta, np.array([np.inf, 0.0]), 0.05)
    with pytest.raises(ValueError):
        central_update(theta, np.zeros(3), 0.05)


def test_projection_identity():
    team = small_team(3)
    cfg = TrainConfig(**SMALL)
    thetas = initial_thetas(team, 0)
    new, _, _ = dimapg_iteration(team, thetas, cfg, 0)
    slots = team.assignment(new)
    assert all(s is new[0] for s in slots)


def test_iteration_does_not_touch_input_thetas():
    team = small_team()
    thetas = initial_thetas(team, 0)
    before = [t.tobytes() for t in thetas]
    dimapg_iteration(team, thetas, TrainConfig(**SMALL), 0)
    assert [t.tobytes() for t in thetas] == before


def test_zero_iterations_returns_init():
    team = small_team()
    res = train(TrainConfig(iterations=0, **SMALL), team)
    assert res.metrics == []
    assert all(a.tobytes() == b.tobytes() for a, b in zip(res.thetas, initial_thetas(team, 0)))


def _strip_clock(rows):
    return [{k: v for k, v in r.items() if k != "wallclock_s"} for r in rows]


@pytest.mark.parametrize("variant", ["dimapg", "single_agent"])
def test_training_is_deterministic(variant):
    cfg = TrainConfig(iterations=3, variant=variant, seed=7, **SMALL)
    a = train(cfg, small_team())
    b = train(cfg, small_team())
    assert _strip_clock(a.metrics) == _strip_clock(b.metrics)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.thetas, b.thetas))
    c = train(dataclasses.replace(cfg, seed=8), small_team())
    assert _strip_clock(c.metrics) != _strip_clock(a.metrics)


def test_metrics_rows_and_episode_counts():
    cfg = TrainConfig(iterations=2, **SMALL)
    res = train(cfg, small_team())
    assert [r["iteration"] for r in res.metrics] == [0, 1]
    per_iter = cfg.n_traj + 2 * cfg.k * cfg.n_traj
    assert [r["episodes"] for r in res.metrics] == [per_iter, 2 * per_iter]


def test_single_agent_variant_keeps_teammates_frozen():
    team = small_team(3)
    cfg = TrainConfig(iterations=2, variant="single_agent", **SMALL)
    res = train(cfg, team)
    assert not np.array_equal(res.thetas[0], res.initial[0])


def test_agent_subsampling():
    team = make_team(SurvivalEnv(n_agents=6, width=8, height=8, n_food=4), hidden=(8,))
    cfg = TrainConfig(iterations=1, agents_per_iter=2, k=1, n_traj=2, horizon=5)
    res = train(cfg, team)
    assert res.metrics[0]["episodes"] == cfg.n_traj + 2 * cfg.n_traj


def test_second_order_correction_matches_jacobian():
    team = small_team(hidden=(5,))
    cfg = TrainConfig(k=2, n_traj=2, horizon=5, first_order=False)
    thetas = initial_thetas(team, 0)
    ad = inner_adapt(team, thetas, 0, cfg, np.random.default_rng(0))
    spec = team.policies[0]
    v = np.random.default_rng(1).normal(size=spec.num_params)

    def adapted_dot_v(theta):
        # replay the inner steps on the stored samples from an arbitrary starting point
        p = theta
        for step in ad.steps:
            p = p + step.alpha * pol.weighted_score(spec, p, step.obs, step.actions, step.weights) / step.denom
        return float(p @ v)

    expected = finite_diff_grad(adapted_dot_v, thetas[0], 1e-5)
    got = second_order_correction(spec, ad, v, 1e-5)
    assert np.max(np.abs(got - expected)) / np.max(np.abs(expected)) < 1e-5


def test_second_order_mode_runs():
    cfg = TrainConfig(iterations=1, first_order=False, **SMALL)
    res = train(cfg, small_team())
    assert np.isfinite(res.metrics[0]["grad_norm"])
