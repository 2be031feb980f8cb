import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dimapg import nn
from dimapg.oracle import finite_diff_grad


def dense_reference(spec, params, x):
    """Straightforward matrix chain written independently of nn.forward."""
    sizes = spec.sizes
    offset = 0
    h = np.asarray(x, dtype=np.float64)
    for i in range(len(sizes) - 1):
        n_in, n_out = sizes[i], sizes[i + 1]
        W = np.array([[params[offset + r * n_in + c] for c in range(n_in)] for r in range(n_out)])
        offset += n_in * n_out
        b = params[offset: offset + n_out]
        offset += n_out
        h = W.dot(h) + b
        if i < len(sizes) - 2:
            h = np.maximum(h, 0) if spec.activation == "relu" else np.tanh(h)
    return h


def test_init_is_seeded_and_sized():
    spec = nn.MlpSpec(2, [3], 1)
    a = nn.init_params(spec, np.random.default_rng(7))
    b = nn.init_params(spec, np.random.default_rng(7))
    assert np.array_equal(a, b)
    assert len(a) == (2 * 3 + 3) + (3 * 1 + 1) == 13


def test_init_biases_zero_and_weights_bounded():
    spec = nn.MlpSpec(4, [6, 5], 3, "tanh")
    p = nn.init_params(spec, np.random.default_rng(0))
    for W, b in nn.unflatten(spec, p):
        assert np.all(b == 0.0)
        fan_out, fan_in = W.shape
        assert np.all(np.abs(W) <= np.sqrt(6.0 / (fan_in + fan_out)))


def test_invalid_spec():
    with pytest.raises(ValueError):
        nn.MlpSpec(0, [3], 1)
    with pytest.raises(ValueError):
        nn.MlpSpec(2, [3], 1, "sigmoid")


def test_forward_zero_params_gives_zero():
    spec = nn.MlpSpec(3, [4], 2)
    out, _ = nn.forward(spec, np.zeros(spec.num_params), np.array([1.0, -2.0, 3.0]))
    assert np.array_equal(out, np.zeros(2))


def test_forward_identity_like_net():
    spec = nn.MlpSpec(1, [1], 1, "relu")
    params = np.array([1.0, 0.0, 1.0, 0.0])
    out, _ = nn.forward(spec, params, np.array([2.0]))
    assert out[0] == 2.0


def test_forward_dimension_mismatch():
    spec = nn.MlpSpec(3, [4], 2)
    with pytest.raises(ValueError):
        nn.forward(spec, np.zeros(spec.num_params), np.ones(4))


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_forward_matches_dense_reference(activation):
    rng = np.random.default_rng(3)
    spec = nn.MlpSpec(4, [5, 6], 3, activation)
    params = rng.normal(size=spec.num_params)
    x = rng.normal(size=4)
    out, _ = nn.forward(spec, params, x)
    assert np.allclose(out, dense_reference(spec, params, x), rtol=1e-13, atol=1e-13)


def test_batched_forward_matches_rows():
    rng = np.random.default_rng(4)
    spec = nn.MlpSpec(3, [7], 2)
    params = rng.normal(size=spec.num_params)
    X = rng.normal(size=(5, 3))
    batch, _ = nn.forward(spec, params, X)
    for i in range(5):
        assert np.allclose(batch[i], nn.forward(spec, params, X[i])[0], rtol=1e-14, atol=1e-14)


def test_forward_is_pure():
    rng = np.random.default_rng(5)
    spec = nn.MlpSpec(3, [4], 2)
    params = rng.normal(size=spec.num_params)
    before = params.copy()
    x = rng.normal(size=3)
    a, _ = nn.forward(spec, params, x)
    b, _ = nn.forward(spec, params, x)
    assert a.tobytes() == b.tobytes()
    assert params.tobytes() == before.tobytes()


def test_backward_zero_output_grad():
    spec = nn.MlpSpec(3, [4], 2)
    params = np.random.default_rng(0).normal(size=spec.num_params)
    _, cache = nn.forward(spec, params, np.ones(3))
    assert np.array_equal(nn.backward(spec, params, cache, np.zeros(2)), np.zeros(spec.num_params))


def test_backward_linear_by_hand():
    # no hidden layer: y = w x + b
    spec = nn.MlpSpec(1, [], 1)
    params = np.array([0.7, 0.1])
    _, cache = nn.forward(spec, params, np.array([3.0]))
    grad = nn.backward(spec, params, cache, np.array([2.0]))
    assert grad[0] == 3.0 * 2.0
    assert grad[1] == 2.0


def _relative_error(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    activation = ["relu", "tanh"][seed % 2]
    spec = nn.MlpSpec(4, [5, 5], 3, activation)
    params = rng.normal(size=spec.num_params)
    x = rng.normal(size=4)
    g_out = rng.normal(size=3)
    _, cache = nn.forward(spec, params, x)
    analytic = nn.backward(spec, params, cache, g_out)
    numeric = finite_diff_grad(lambda p: float(nn.forward(spec, p, x)[0] @ g_out), params, 1e-5)
    assert _relative_error(analytic, numeric) < 1e-6


def test_batched_backward_is_sum_of_rows():
    rng = np.random.default_rng(1)
    spec = nn.MlpSpec(3, [4], 2, "tanh")
    params = rng.normal(size=spec.num_params)
    X, G = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    _, cache = nn.forward(spec, params, X)
    total = nn.backward(spec, params, cache, G)
    rows = sum(nn.backward(spec, params, nn.forward(spec, params, X[i])[1], G[i]) for i in range(6))
    assert np.allclose(total, rows, rtol=1e-12, atol=1e-12)


def test_unflatten_flatten_roundtrip():
    spec = nn.MlpSpec(3, [4, 2], 5)
    p = np.random.default_rng(2).normal(size=spec.num_params)
    assert nn.flatten(nn.unflatten(spec, p)).tobytes() == p.tobytes()


def test_add_scaled_examples():
    assert np.array_equal(nn.add_scaled(np.array([1.0, 2.0]), np.array([1.0, -1.0]), 0.5), [1.5, 1.5])
    base = np.array([1.0, -0.0, 3.0])
    assert nn.add_scaled(base, np.array([5.0, -7.0, 1.0]), 0.0).tobytes() == base.tobytes()
    assert np.array_equal(nn.add_scaled(base, np.zeros(3), 0.3), base)
    with pytest.raises(ValueError):
        nn.add_scaled(np.zeros(2), np.zeros(3), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8).flatmap(
    lambda xs: st.tuples(st.just(xs), st.lists(st.floats(-1e3, 1e3), min_size=len(xs), max_size=len(xs)),
                         st.floats(-10, 10))))
def test_add_scaled_is_exact_arithmetic(data):
    base, direction, step = (np.array(data[0]), np.array(data[1]), data[2])
    out = nn.add_scaled(base, direction, step)
    assert np.array_equal(out, base + step * direction) or step == 0
