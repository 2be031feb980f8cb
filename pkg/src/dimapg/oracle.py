"""Brute-force oracles for checking gradients and estimator expectations.

Everything here is exhaustive enumeration or finite differences and shares no
code with the estimators it checks, apart from the trajectory container.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import nn, pg
from . import policy as pol

MAX_TRAJECTORIES = 10 ** 6


def finite_diff_grad(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e.flat[i] = h
        hi, lo = f(theta + e), f(theta - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"objective is not finite around coordinate {i}")
        grad.flat[i] = (hi - lo) / (2 * h)
    return grad


def forward_diff_grad(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-7) -> np.ndarray:
    """One-sided differences; a deliberately different scheme for cross-checking."""
    theta = np.asarray(theta, dtype=np.float64)
    f0 = f(theta)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e.flat[i] = h
        grad.flat[i] = (f(theta + e) - f0) / h
    return grad


def _head_log_prob(head: str, out: np.ndarray, log_std: np.ndarray | None, action) -> np.ndarray:
    """log pi(action) for each row of network outputs `out`."""
    if head == "gaussian":
        u = (np.asarray(action, dtype=np.float64) - out) * np.exp(-log_std)
        return -0.5 * (u * u).sum(axis=-1) - log_std.sum() - 0.5 * len(log_std) * np.log(2 * np.pi)
    m = out.max(axis=-1, keepdims=True)
    lse = (m + np.log(np.exp(out - m).sum(axis=-1, keepdims=True)))[:, 0]
    return out[:, int(action)] - lse


def log_prob_finite_diff(policy: pol.PolicySpec, params: np.ndarray, obs: np.ndarray, action,
                         h: float = 1e-5) -> np.ndarray:
    """Central differences of log pi(action | obs) with respect to every parameter.

    Perturbing one weight or bias of a layer only shifts that layer's
    pre-activations, so every perturbation of a layer is pushed through the
    remaining layers in one batch instead of one full forward pass each.
    """
    net = policy.net
    params = np.asarray(params, dtype=np.float64)
    n = net.num_params
    layers = nn.unflatten(net, params[:n])
    log_std = params[n:] if policy.head == "gaussian" else None
    last = len(layers) - 1

    def act(z):
        return np.maximum(z, 0.0) if net.activation == "relu" else np.tanh(z)

    inputs, preacts = [np.asarray(obs, dtype=np.float64)[None, :]], []
    for i, (W, b) in enumerate(layers):
        z = inputs[-1] @ W.T + b
        preacts.append(z)
        inputs.append(act(z))

    def finish(z: np.ndarray, layer: int) -> np.ndarray:
        for W, b in layers[layer + 1:]:
            z = act(z) @ W.T + b
        return _head_log_prob(policy.head, z, log_std, action)

    grad = np.empty(policy.num_params)
    for layer, (w_sl, (fan_out, fan_in), b_sl) in enumerate(net.layer_slices()):
        rows = np.repeat(np.arange(fan_out), fan_in)
        shift = np.zeros((fan_out * fan_in + fan_out, fan_out))
        shift[np.arange(fan_out * fan_in), rows] = h * np.tile(inputs[layer][0], fan_out)
        shift[fan_out * fan_in + np.arange(fan_out), np.arange(fan_out)] = h
        diff = finish(preacts[layer] + shift, layer) - finish(preacts[layer] - shift, layer)
        grad[w_sl] = diff[:fan_out * fan_in] / (2 * h)
        grad[b_sl] = diff[fan_out * fan_in:] / (2 * h)
    if log_std is not None:
        out = preacts[last]
        for j in range(len(log_std)):
            e = np.zeros_like(log_std)
            e[j] = h
            hi = _head_log_prob("gaussian", out, log_std + e, action)[0]
            lo = _head_log_prob("gaussian", out, log_std - e, action)[0]
            grad[n + j] = (hi - lo) / (2 * h)
    return grad


@dataclass
class TinyMDP:
    transitions: np.ndarray  # (S, A, S)
    rewards: np.ndarray  # (S, A)
    initial: np.ndarray  # (S,)
    horizon: int
    gamma: float = 1.0

    def __post_init__(self) -> None:
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        S, A, S2 = self.transitions.shape
        if S != S2 or self.rewards.shape != (S, A) or self.initial.shape != (S,):
            raise ValueError("inconsistent TinyMDP shapes")
        if not np.allclose(self.transitions.sum(axis=2), 1.0) or not np.isclose(self.initial.sum(), 1.0):
            raise ValueError("transition rows and the initial distribution must sum to 1")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


def random_tiny_mdp(rng: np.random.Generator, n_states: int = 3, n_actions: int = 2, horizon: int = 2,
                    gamma: float = 1.0) -> TinyMDP:
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    return TinyMDP(P, rng.normal(size=(n_states, n_actions)), rng.dirichlet(np.ones(n_states)), horizon, gamma)


def tabular_probs(mdp: TinyMDP, theta: np.ndarray) -> np.ndarray:
    logits = np.asarray(theta, dtype=np.float64).reshape(mdp.n_states, mdp.n_actions)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Path:
    prob: float
    states: tuple[int, ...]
    actions: tuple[int, ...]
    rewards: tuple[float, ...]


def enumerate_paths(mdp: TinyMDP, theta: np.ndarray) -> Iterator[Path]:
    S, A, H = mdp.n_states, mdp.n_actions, mdp.horizon
    if (S * A) ** H > MAX_TRAJECTORIES:
        raise ValueError("TinyMDP too large to enumerate")
    probs = tabular_probs(mdp, theta)
    for states in itertools.product(range(S), repeat=H):
        for actions in itertools.product(range(A), repeat=H):
            p = mdp.initial[states[0]]
            for t in range(H):
                p *= probs[states[t], actions[t]]
                if t + 1 < H:
                    p *= mdp.transitions[states[t], actions[t], states[t + 1]]
            if p == 0.0:
                continue
            rewards = tuple(float(mdp.rewards[s, a]) for s, a in zip(states, actions))
            yield Path(p, states, actions, rewards)


def path_return(mdp: TinyMDP, path: Path) -> float:
    return sum(mdp.gamma ** t * r for t, r in enumerate(path.rewards))


def exact_expected_return(mdp: TinyMDP, theta: np.ndarray) -> float:
    return sum(p.prob * path_return(mdp, p) for p in enumerate_paths(mdp, theta))


def _score(mdp: TinyMDP, probs: np.ndarray, s: int, a: int) -> np.ndarray:
    g = np.zeros((mdp.n_states, mdp.n_actions))
    g[s] -= probs[s]
    g[s, a] += 1.0
    return g.ravel()


def exact_score_gradient(mdp: TinyMDP, theta: np.ndarray,
                         baseline: Callable[[int, int], float] | None = None) -> np.ndarray:
    """sum_tau P(tau) R(tau) grad log pi(tau); with a baseline b(state, t) the
    reward-to-go form sum_t gamma^t grad log pi(a_t|s_t) (G_t - b(s_t, t)) is used."""
    probs = tabular_probs(mdp, theta)
    grad = np.zeros(mdp.n_states * mdp.n_actions)
    for path in enumerate_paths(mdp, theta):
        if baseline is None:
            score = sum(_score(mdp, probs, s, a) for s, a in zip(path.states, path.actions))
            grad += path.prob * path_return(mdp, path) * score
            continue
        for t, (s, a) in enumerate(zip(path.states, path.actions)):
            G = sum(mdp.gamma ** (u - t) * path.rewards[u] for u in range(t, mdp.horizon))
            grad += path.prob * mdp.gamma ** t * (G - baseline(s, t)) * _score(mdp, probs, s, a)
    return grad


def exact_expectation(mdp: TinyMDP, theta: np.ndarray, estimator: Callable[[Path], np.ndarray]) -> np.ndarray:
    """sum_tau P(tau | theta) estimator(tau)."""
    return sum(p.prob * np.asarray(estimator(p), dtype=np.float64) for p in enumerate_paths(mdp, theta))


def path_to_trajectory(mdp: TinyMDP, path: Path) -> pg.Trajectory:
    """Single-agent trajectory with one-hot state observations."""
    H = mdp.horizon
    obs = np.zeros((H, 1, mdp.n_states))
    obs[np.arange(H), 0, list(path.states)] = 1.0
    # log-probs are left at zero; the estimators under test recompute scores from params
    return pg.Trajectory(obs, np.array(path.actions, dtype=np.int64).reshape(H, 1),
                         np.array(path.rewards).reshape(H, 1), np.zeros((H, 1)), np.ones((H, 1), dtype=bool),
                         horizon=H)


# Linear one-hot network <-> logit table.  Layout: W (A x S, row-major) then b (A).


def table_from_linear(mdp: TinyMDP, params: np.ndarray) -> np.ndarray:
    S, A = mdp.n_states, mdp.n_actions
    W = params[: A * S].reshape(A, S)
    b = params[A * S: A * S + A]
    return (W.T + b).ravel()


def linear_from_table(mdp: TinyMDP, theta: np.ndarray) -> np.ndarray:
    S, A = mdp.n_states, mdp.n_actions
    return np.concatenate([np.asarray(theta).reshape(S, A).T.ravel(), np.zeros(A)])


class TinyMDPEnv:
    """Single-agent environment contract around a TinyMDP (one-hot observations)."""

    action_kind = "discrete"
    num_agents = 1
    populations = (0,)

    def __init__(self, mdp: TinyMDP):
        self.mdp = mdp
        self.obs_dim = mdp.n_states
        self.action_size = mdp.n_actions
        self._rng: np.random.Generator | None = None
        self._state: np.ndarray | None = None

    def _obs(self) -> np.ndarray:
        return np.eye(self.mdp.n_states)[self._state][:, None, :]

    def reset(self, rng: np.random.Generator, batch: int = 1) -> np.ndarray:
        self._rng = np.random.default_rng(rng.integers(2 ** 63))
        self._state = self._rng.choice(self.mdp.n_states, size=batch, p=self.mdp.initial)
        return self._obs()

    def step(self, actions: np.ndarray):
        from .envs.base import StepResult

        a = np.asarray(actions).reshape(-1)
        r = self.mdp.rewards[self._state, a]
        u = self._rng.random(len(a))
        cdf = np.cumsum(self.mdp.transitions[self._state, a], axis=1)
        self._state = np.minimum((cdf < u[:, None]).sum(axis=1), self.mdp.n_states - 1)
        return StepResult(self._obs(), r[:, None], np.ones((len(a), 1), dtype=bool))

    def episode_stats(self) -> dict[str, np.ndarray]:
        return {}


@dataclass
class FidelityReport:
    """First-order two-term estimator versus the true composite gradient."""

    exact_inner_gap: float  # inner step uses the exact gradient
    exact_inner_norm: float
    sampled_inner_gap: float  # inner step uses a one-trajectory REINFORCE estimate
    sampled_inner_norm: float
    k0_gap: float  # two-term estimator with no adaptation vs plain REINFORCE, exact expectations

    def lines(self) -> list[str]:
        return [
            f"k = 0:              |two_term - reinforce|  = {self.k0_gap:.3e}",
            f"exact inner step:   |true - first_order| = {self.exact_inner_gap:.3e} (|true| = {self.exact_inner_norm:.3e})",
            f"sampled inner step: |true - two_term|    = {self.sampled_inner_gap:.3e} (|true| = {self.sampled_inner_norm:.3e})",
        ]


def _single_path_gradient(mdp: TinyMDP, theta: np.ndarray, path: Path) -> np.ndarray:
    probs = tabular_probs(mdp, theta)
    score = sum(_score(mdp, probs, s, a) for s, a in zip(path.states, path.actions))
    return path_return(mdp, path) * score


def tabular_policy(mdp: TinyMDP) -> pol.PolicySpec:
    """Linear categorical policy on one-hot states; its logits are exactly the table."""
    return pol.PolicySpec(nn.MlpSpec(mdp.n_states, (), mdp.n_actions), "categorical")


def two_term_k0_gap(mdp: TinyMDP, theta: np.ndarray) -> float:
    """Max deviation between the exact expectations of the two-term outer gradient
    with k = 0 and of plain REINFORCE, both over one-trajectory batches.

    The pre and post batches are drawn independently, so the expectation is a
    double sum over enumerated trajectory pairs.
    """
    from .algorithm import AdaptedParams, Team, TrainConfig, outer_gradient

    spec = tabular_policy(mdp)
    team = Team(TinyMDPEnv(mdp), (spec,))
    params = linear_from_table(mdp, theta)
    config = TrainConfig(k=0, horizon=mdp.horizon, gamma=mdp.gamma, baseline=False, normalize_advantages=False,
                         step_average=False, term_b_offset=False)
    paths = list(enumerate_paths(mdp, theta))
    pre = [path_to_trajectory(mdp, p) for p in paths]
    post = [dataclasses.replace(tr, tag=pg.ADAPTED, adapted_agent=0) for tr in pre]
    adapted = [AdaptedParams(0, params.copy(), [params.copy()])]
    two_term = np.zeros(spec.num_params)
    reinforce = np.zeros(spec.num_params)
    for p_post, tr_post in zip(paths, post):
        reinforce += p_post.prob * pg.reinforce_gradient([tr_post], spec, params, 0, None, mdp.gamma)
        for p_pre, tr_pre in zip(paths, pre):
            g = outer_gradient(team, [params], adapted, [tr_pre], {0: [tr_post]}, config)[0]
            two_term += p_pre.prob * p_post.prob * g
    return float(np.max(np.abs(two_term - reinforce)))


def composite_gradient_report(mdp: TinyMDP, theta: np.ndarray, alpha: float, h: float = 1e-5) -> FidelityReport:
    """Measure what the first-order two-term gradient misses for one adaptation step.

    Exact inner step: J(theta) = V(theta + alpha grad V(theta)); the estimator's
    expectation is grad V at the adapted point (the pre-adaptation score term has
    zero mean because the adapted point is deterministic).

    Sampled inner step: J(theta) = E_tau[V(theta + alpha g(tau; theta))] with g the
    one-trajectory REINFORCE estimate; the estimator's expectation is
    E_tau[grad V(theta_n) + V(theta_n) grad log P(tau)].
    """
    theta = np.asarray(theta, dtype=np.float64)

    def adapted_exact(th):
        return th + alpha * exact_score_gradient(mdp, th)

    def J_exact(th):
        return exact_expected_return(mdp, adapted_exact(th))

    true_exact = finite_diff_grad(J_exact, theta, h)
    first_order = exact_score_gradient(mdp, adapted_exact(theta))

    def J_sampled(th):
        return sum(p.prob * exact_expected_return(mdp, th + alpha * _single_path_gradient(mdp, th, p))
                   for p in enumerate_paths(mdp, th))

    true_sampled = finite_diff_grad(J_sampled, theta, h)
    probs = tabular_probs(mdp, theta)
    two_term = np.zeros_like(theta)
    for p in enumerate_paths(mdp, theta):
        th_n = theta + alpha * _single_path_gradient(mdp, theta, p)
        score = sum(_score(mdp, probs, s, a) for s, a in zip(p.states, p.actions))
        two_term += p.prob * (exact_score_gradient(mdp, th_n) + exact_expected_return(mdp, th_n) * score)
    return FidelityReport(
        float(np.linalg.norm(true_exact - first_order)), float(np.linalg.norm(true_exact)),
        float(np.linalg.norm(true_sampled - two_term)), float(np.linalg.norm(true_sampled)),
        two_term_k0_gap(mdp, theta),
    )
