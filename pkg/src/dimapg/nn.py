"""Dense feed-forward network driven entirely by a flat parameter vector.

Layout per layer is the weight matrix (out x in, row-major) followed by the
bias.  Because the network never owns its parameters, copying, averaging and
gradient steps are plain numpy arithmetic on 1-D float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def num_params(self) -> int:
        s = self.sizes
        return sum(s[i + 1] * s[i] + s[i + 1] for i in range(len(s) - 1))

    def layer_slices(self) -> list[tuple[slice, tuple[int, int], slice]]:
        """(weight slice, weight shape, bias slice) for every layer."""
        out = []
        offset = 0
        s = self.sizes
        for fan_in, fan_out in zip(s[:-1], s[1:]):
            w = slice(offset, offset + fan_out * fan_in)
            offset = w.stop
            b = slice(offset, offset + fan_out)
            offset = b.stop
            out.append((w, (fan_out, fan_in), b))
        return out


@dataclass
class ForwardCache:
    # activations[0] is the input; preacts[i] feeds activations[i + 1]
    activations: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    batched: bool = False


def _check_len(spec: MlpSpec, params: np.ndarray) -> None:
    if params.ndim != 1 or params.shape[0] != spec.num_params:
        raise ValueError(f"expected parameter vector of length {spec.num_params}, got shape {params.shape}")


def unflatten(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of (W, b) per layer into `params`."""
    _check_len(spec, params)
    return [(params[w].reshape(shape), params[b]) for w, shape, b in spec.layer_slices()]


def flatten(layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers]).astype(np.float64)


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform Xavier weights, zero biases."""
    params = np.zeros(spec.num_params)
    for w, (fan_out, fan_in), _ in spec.layer_slices():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[w] = rng.uniform(-bound, bound, size=fan_out * fan_in)
    return params


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    return (z > 0.0).astype(np.float64) if name == "relu" else 1.0 - a * a


def forward(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network on one input (1-D) or a batch of inputs (2-D, rows)."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    if h.ndim != 2 or h.shape[1] != spec.input_dim:
        raise ValueError(f"input has shape {x.shape}, expected (..., {spec.input_dim})")
    layers = unflatten(spec, params)
    cache = ForwardCache(activations=[h], batched=batched)
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = h @ W.T + b
        cache.preacts.append(z)
        h = z if i == last else _act(spec.activation, z)
        cache.activations.append(h)
    return (h if batched else h[0]), cache


def backward(spec: MlpSpec, params: np.ndarray, cache: ForwardCache, output_grad: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the parameters of sum(output_grad * output), summed over the batch."""
    g = np.asarray(output_grad, dtype=np.float64)
    if not cache.batched:
        g = g[None, :]
    n_rows = cache.activations[0].shape[0]
    if g.shape != (n_rows, spec.output_dim):
        raise ValueError(f"output gradient has shape {np.shape(output_grad)}, expected output_dim {spec.output_dim}")
    layers = unflatten(spec, params)
    grad = np.empty(spec.num_params)
    slices = spec.layer_slices()
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        w_sl, _, b_sl = slices[i]
        h_in = cache.activations[i]
        grad[w_sl] = (g.T @ h_in).ravel()
        grad[b_sl] = g.sum(axis=0)
        if i > 0:
            g = (g @ W) * _act_grad(spec.activation, cache.preacts[i - 1], cache.activations[i])
    return grad


def add_scaled(base: np.ndarray, direction: np.ndarray, step: float) -> np.ndarray:
    """base + step * direction as a new vector."""
    base = np.asarray(base, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if base.shape != direction.shape:
        raise ValueError(f"length mismatch: {base.shape} vs {direction.shape}")
    if step == 0:
        # -0.0 + 0.0 flips the sign bit; a zero step must be a bitwise no-op
        return base.copy()
    return base + step * direction
