import numpy as np
import pytest

from pathrl.checkpoint import load_arrays, save_arrays
from pathrl.errors import ConfigurationError, NumericError
from pathrl.nets import (
    AdamState,
    MlpParams,
    MlpSpec,
    adam_init,
    adam_step,
    clip_grad_norm,
    finite_diff_check,
    flat_to_params,
    global_norm,
    init_mlp,
    layer_norm,
    mlp_backward,
    mlp_forward,
    params_to_flat,
    silu,
    silu_grad,
)


def reference_forward(params, spec, x):
    # straight-line re-evaluation of the layer formula, kept independent of
    # the production code path on purpose
    h = x
    for l in range(spec.num_layers):
        u = h @ params.weights[l] + params.biases[l]
        if l == spec.num_layers - 1:
            return u
        if spec.use_layer_norm:
            mu = u.mean(axis=-1, keepdims=True)
            var = ((u - mu) ** 2).mean(axis=-1, keepdims=True)
            u = params.ln_scales[l] * (u - mu) / np.sqrt(var + 1e-5) + params.ln_offsets[l]
        h = u / (1.0 + np.exp(-u))
    return h


@pytest.mark.parametrize("use_ln", [False, True])
def test_forward_matches_reference(use_ln):
    rng = np.random.default_rng(0)
    for _ in range(10):
        spec = MlpSpec(
            input_dim=int(rng.integers(1, 6)),
            hidden_dim=int(rng.integers(2, 9)),
            output_dim=int(rng.integers(1, 5)),
            num_layers=int(rng.integers(1, 5)),
            use_layer_norm=use_ln,
        )
        params = init_mlp(spec, rng)
        x = rng.standard_normal((7, spec.input_dim))
        y, _ = mlp_forward(params, spec, x)
        assert np.max(np.abs(y - reference_forward(params, spec, x))) < 1e-12


def test_identity_single_layer():
    spec = MlpSpec(input_dim=3, hidden_dim=3, output_dim=3, num_layers=1)
    params = MlpParams([np.eye(3)], [np.zeros(3)], [], [])
    x = np.random.default_rng(1).standard_normal((5, 3))
    y, _ = mlp_forward(params, spec, x)
    assert np.array_equal(y, x)


def test_scalar_silu_net_input_grad():
    # f(x) = silu(w * x): build as 2 layers with an identity output layer
    w = 1.7
    spec = MlpSpec(input_dim=1, hidden_dim=1, output_dim=1, num_layers=2)
    params = MlpParams(
        [np.array([[w]]), np.array([[1.0]])],
        [np.zeros(1), np.zeros(1)],
        [],
        [],
    )
    x = np.array([[0.3], [-1.2], [2.0]])
    y, cache = mlp_forward(params, spec, x)
    assert np.allclose(y, silu(w * x))
    upstream = np.array([[1.0], [2.0], [-0.5]])
    _, input_grad = mlp_backward(params, spec, cache, upstream)
    assert np.allclose(input_grad, upstream * w * silu_grad(w * x), atol=1e-14)


def test_silu_grad_matches_fd():
    z = np.linspace(-6, 6, 41)
    eps = 1e-6
    fd = (silu(z + eps) - silu(z - eps)) / (2 * eps)
    assert np.max(np.abs(silu_grad(z) - fd)) < 1e-9


def test_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(2)
    spec = MlpSpec(4, 8, 3, 3, use_layer_norm=True)
    params = init_mlp(spec, rng)
    _, cache = mlp_forward(params, spec, rng.standard_normal((6, 4)))
    grads, input_grad = mlp_backward(params, spec, cache, np.zeros((6, 3)))
    assert np.all(params_to_flat(grads) == 0.0)
    assert np.all(input_grad == 0.0)


@pytest.mark.parametrize("use_ln", [False, True])
def test_backward_matches_finite_differences(use_ln):
    # property: exact reverse mode over 20 random nets
    for seed in range(20):
        rng = np.random.default_rng(seed)
        spec = MlpSpec(
            input_dim=int(rng.integers(1, 5)),
            hidden_dim=int(rng.integers(2, 7)),
            output_dim=int(rng.integers(1, 4)),
            num_layers=int(rng.integers(1, 4)),
            use_layer_norm=use_ln,
        )
        x = rng.standard_normal((4, spec.input_dim))
        upstream = rng.standard_normal((4, spec.output_dim))
        flat0 = params_to_flat(init_mlp(spec, rng))

        def loss_and_grad(flat):
            params = flat_to_params(flat, spec)
            y, cache = mlp_forward(params, spec, x)
            grads, _ = mlp_backward(params, spec, cache, upstream)
            return float(np.sum(upstream * y)), params_to_flat(grads)

        assert finite_diff_check(loss_and_grad, flat0, eps=1e-5) < 1e-6


def test_input_grad_matches_finite_differences():
    rng = np.random.default_rng(7)
    spec = MlpSpec(3, 6, 2, 3, use_layer_norm=True)
    params = init_mlp(spec, rng)
    x0 = rng.standard_normal((3, 3))
    upstream = rng.standard_normal((3, 2))
    _, cache = mlp_forward(params, spec, x0)
    _, input_grad = mlp_backward(params, spec, cache, upstream)
    eps = 1e-6
    for i in range(x0.shape[0]):
        for j in range(x0.shape[1]):
            xp, xm = x0.copy(), x0.copy()
            xp[i, j] += eps
            xm[i, j] -= eps
            fd = (
                np.sum(upstream * mlp_forward(params, spec, xp)[0])
                - np.sum(upstream * mlp_forward(params, spec, xm)[0])
            ) / (2 * eps)
            assert abs(input_grad[i, j] - fd) < 1e-7


def test_layer_norm_properties():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((10, 16)) * 5 + 2
    out = layer_norm(x, np.ones(16), np.zeros(16))
    assert np.max(np.abs(out.mean(axis=-1))) < 1e-12
    # unit variance up to the epsilon regularizer
    assert np.max(np.abs(out.var(axis=-1) - 1.0)) < 1e-3
    # scale/offset affine behavior
    out2 = layer_norm(x, 2.0 * np.ones(16), 3.0 * np.ones(16))
    assert np.allclose(out2, 2.0 * out + 3.0)
    # constant row: epsilon keeps it finite and centered at the offset
    const = np.full((1, 16), 4.2)
    out3 = layer_norm(const, np.ones(16), np.zeros(16))
    assert np.all(np.isfinite(out3))
    assert np.max(np.abs(out3)) < 1e-9


def test_layer_norm_shape_mismatch():
    with pytest.raises(ConfigurationError):
        layer_norm(np.zeros((2, 4)), np.ones(3), np.zeros(4))


def test_forward_rejects_bad_input():
    spec = MlpSpec(3, 4, 2, 2)
    params = init_mlp(spec, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        mlp_forward(params, spec, np.zeros((2, 5)))
    with pytest.raises(NumericError):
        mlp_forward(params, spec, np.array([[np.nan, 0.0, 1.0]]))


def test_backward_rejects_mismatched_cache():
    rng = np.random.default_rng(0)
    spec = MlpSpec(3, 4, 2, 2)
    params = init_mlp(spec, rng)
    _, cache = mlp_forward(params, spec, rng.standard_normal((2, 3)))
    with pytest.raises(ConfigurationError):
        mlp_backward(params, spec, cache[:1], np.zeros((2, 2)))
    with pytest.raises(ConfigurationError):
        mlp_backward(params, spec, cache, np.zeros((2, 3)))


def test_flatten_round_trip():
    rng = np.random.default_rng(5)
    spec = MlpSpec(4, 8, 3, 3, use_layer_norm=True)
    params = init_mlp(spec, rng)
    flat = params_to_flat(params)
    assert flat.shape == (spec.num_params(),)
    back = flat_to_params(flat, spec)
    assert np.array_equal(params_to_flat(back), flat)


def test_init_scaling_and_final_gain():
    rng = np.random.default_rng(6)
    spec = MlpSpec(64, 64, 64, 3)
    params = init_mlp(spec, rng, final_gain=0.01)
    bound = np.sqrt(3.0 / 64)
    for w in params.weights[:-1]:
        assert np.max(np.abs(w)) <= bound
        # approximate norm preservation for unit-variance input
        x = rng.standard_normal((200, 64))
        ratio = np.mean(np.sum((x @ w) ** 2, axis=1)) / np.mean(np.sum(x**2, axis=1))
        assert 0.7 < ratio < 1.3
    assert np.max(np.abs(params.weights[-1])) <= 0.01 * bound
    assert all(np.all(b == 0) for b in params.biases)


def test_adam_single_step_example():
    state = adam_init(1)
    params = np.array([1.0])
    new_params, new_state = adam_step(state, params, np.array([1.0]), lr=0.1)
    # bias correction makes the first step ~ -lr * sign(grad)
    assert abs(new_params[0] - (1.0 - 0.1)) < 1e-6
    assert new_state.step == 1
    assert state.step == 0  # input state untouched


def test_adam_zero_lr_keeps_params():
    rng = np.random.default_rng(8)
    params = rng.standard_normal(10)
    state = adam_init(10)
    new_params, state = adam_step(state, params, rng.standard_normal(10), lr=0.0)
    assert np.array_equal(new_params, params)


def test_adam_rejects_nonfinite():
    state = adam_init(2)
    before = AdamState(m=state.m.copy(), v=state.v.copy(), step=state.step)
    with pytest.raises(NumericError):
        adam_step(state, np.zeros(2), np.array([1.0, np.inf]), lr=0.1)
    assert np.array_equal(state.m, before.m) and state.step == before.step


def test_adam_converges_on_quadratic():
    # minimize 0.5*||p - c||^2
    rng = np.random.default_rng(9)
    c = rng.standard_normal(5)
    params = np.zeros(5)
    state = adam_init(5)
    for _ in range(2000):
        params, state = adam_step(state, params, params - c, lr=0.05)
    assert np.max(np.abs(params - c)) < 1e-3


def test_clip_grad_norm():
    g = np.array([3.0, 4.0])
    clipped = clip_grad_norm(g, 0.5)
    assert abs(global_norm(clipped) - 0.5) < 1e-12
    assert np.allclose(clipped / global_norm(clipped), g / 5.0)
    small = np.array([0.1, 0.1])
    assert np.array_equal(clip_grad_norm(small, 0.5), small)
    with pytest.raises(ConfigurationError):
        clip_grad_norm(g, 0.0)


def test_finite_diff_check_flags_wrong_gradient():
    def good(p):
        return float(np.sum(p**2)), 2.0 * p

    def bad(p):
        return float(np.sum(p**2)), 2.0 * p + 0.1

    p0 = np.array([0.5, -1.0, 2.0])
    assert finite_diff_check(good, p0) < 1e-8
    assert finite_diff_check(bad, p0) > 1e-2


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    arrays = {
        "actor/w0": rng.standard_normal((4, 3)),
        "duals/log_alpha": np.array(-4.6051701859880914),
        "meta/config": np.str_('{"env": "pendulum"}'),
        "norm/count": np.int64(12345),
    }
    path = tmp_path / "ckpt.npz"
    save_arrays(path, arrays)
    loaded = load_arrays(path)
    assert set(loaded) == set(arrays)
    for key, value in arrays.items():
        stored = loaded[key]
        if np.asarray(value).dtype.kind == "U":
            assert str(stored) == str(value)
        else:
            assert np.array_equal(stored, np.asarray(value))
            assert np.asarray(value).dtype == stored.dtype  # bit-exact float64 round trip


def test_checkpoint_rejects_reserved_key(tmp_path):
    with pytest.raises(ConfigurationError):
        save_arrays(tmp_path / "x.npz", {"__format_version__": np.zeros(1)})


def test_backward_input_grad_only_matches_full_path():
    spec = MlpSpec(input_dim=5, hidden_dim=16, output_dim=7, num_layers=3, use_layer_norm=True)
    rng = np.random.default_rng(31)
    params = init_mlp(spec, rng)
    x = rng.normal(size=(9, 5))
    _, cache = mlp_forward(params, spec, x)
    up = rng.normal(size=(9, 7))
    _, dx_full = mlp_backward(params, spec, cache, up)
    grads, dx_fast = mlp_backward(params, spec, cache, up, input_grad_only=True)
    assert grads is None
    np.testing.assert_array_equal(dx_full, dx_fast)
