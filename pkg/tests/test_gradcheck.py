import numpy as np
import pytest

from hanfuse.checks import kink_margin
from hanfuse.engine import HanConfig, forward_cached, random_params, zero_router_params
from hanfuse.errors import ShapeError, UsageError
from hanfuse.gradcheck import (
    backward,
    fd_gradient,
    loss_and_grad,
    max_relative_error,
    network_fd_gradient,
    relative_errors,
)
from hanfuse.fusion import ModalityPair

TINY = HanConfig(C=4, H=2, W=2, L=2, G=2, c=2)


def case(seed, cfg=TINY):
    rng = np.random.default_rng(seed)
    params = random_params(cfg, seed)
    pair = ModalityPair(rng.standard_normal(cfg.shape), rng.standard_normal(cfg.shape))
    return params, pair, rng.standard_normal(cfg.shape)


def smooth_case(cfg=TINY, start=0):
    seed = start
    while True:
        params, pair, upstream = case(seed, cfg)
        _, cache = forward_cached(pair, params, cfg)
        if kink_margin(cache) > 1e-3:
            return params, pair, upstream, cache
        seed += 1


def test_zero_upstream_gives_zero_gradients():
    params, pair, _ = case(0)
    _, cache = forward_cached(pair, params, TINY)
    grads, g_in = backward(cache, np.zeros(TINY.shape))
    assert not grads.flat().any()
    assert not g_in.rgb.any() and not g_in.tir.any()


def test_missing_cache():
    with pytest.raises(UsageError):
        backward(None, np.zeros(TINY.shape))


def test_upstream_shape_checked():
    params, pair, _ = case(0)
    _, cache = forward_cached(pair, params, TINY)
    with pytest.raises(ShapeError):
        backward(cache, np.zeros((4, 2, 3)))


def test_single_affine_parameter_closed_form():
    # One pixel, only the t2r unit reaches the output, and its value path is
    # shift * Wv * Wo, so channel 0 of the fused map is w * x with w = Wo[0, 0].
    cfg = HanConfig(C=2, H=1, W=1, L=1, G=2, c=1)
    params = zero_router_params(random_params(cfg, 0))
    unit = params.layers[0].cmeu_t2r
    unit.Wq[...] = 0.0
    unit.Wk[...] = 0.0
    unit.Wv[...] = [[1.0], [0.0]]
    unit.norm_shift[...] = [0.7, 0.0]
    unit.Wo[...] = [[-1.3, 0.0]]
    x, w = 0.7, -1.3
    gates = np.zeros((1, 4, 4))
    gates[0, 3] = 1.0
    zero = np.zeros(cfg.shape)
    fused, cache = forward_cached((zero, zero), params, cfg, gates=gates)
    assert fused[0, 0, 0] == pytest.approx(w * x, abs=1e-15)
    upstream = np.zeros(cfg.shape)
    upstream[0] = 2.0 * fused[0]  # d/dfused of fused[0]**2
    grads, _ = backward(cache, upstream)
    assert grads.layers[0].cmeu_t2r.Wo[0, 0] == 2.0 * w * x * x


def test_fd_linear_loss():
    a = np.array([1.5, -2.0, 0.25])
    theta = np.array([0.3, 0.1, -4.0])
    g = fd_gradient(lambda t: float(a @ t), theta, h=1e-4)
    np.testing.assert_allclose(g, a, atol=1e-10)


def test_fd_quadratic():
    theta = np.array([3.0])
    assert abs(fd_gradient(lambda t: float(t[0] ** 2), theta)[0] - 6.0) < 1e-8
    assert theta[0] == 3.0


def test_fd_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        fd_gradient(lambda t: 0.0, np.zeros(1), h=0.0)


def test_fd_on_params_matches_backward_on_small_block():
    params, pair, upstream, _ = smooth_case()
    sub = params.layers[1].routers[0].b2

    def loss(_):
        return loss_and_grad(pair, params, TINY, upstream)[0]

    numeric = fd_gradient(loss, sub, h=1e-6)
    _, grads = loss_and_grad(pair, params, TINY, upstream)
    np.testing.assert_allclose(grads.layers[1].routers[0].b2, numeric, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("tap", ["output", "input"])
def test_backward_matches_network_fd(backend, tap):
    cfg = TINY.replace(router_tap=tap)
    params, pair, upstream, cache = smooth_case(cfg)
    analytic, _ = backward(cache, upstream)
    numeric = network_fd_gradient(pair, params, cfg, upstream)
    assert max_relative_error(analytic, numeric) < 1e-5


def test_input_gradient_matches_fd():
    params, pair, upstream, cache = smooth_case()
    _, g_in = backward(cache, upstream)

    def loss(x):
        fused, _ = forward_cached((x, pair.tir), params, TINY)
        return float(np.sum(upstream * fused))

    numeric = fd_gradient(loss, pair.rgb.copy(), h=1e-6)
    assert relative_errors(g_in.rgb, numeric).max() < 1e-4


def test_replayed_gates_have_no_router_gradient():
    params, pair, upstream = case(3)
    gates = np.random.default_rng(0).uniform(0.1, 0.9, (2, 4, 4))
    _, cache = forward_cached(pair, params, TINY, gates=gates)
    grads, _ = backward(cache, upstream)
    for name, a in grads.named_arrays():
        if ".router" in name:
            assert not a.any()
    assert grads.layers[0].seu_rgb.gamma.any()


def test_deterministic():
    params, pair, upstream = case(4)
    a = loss_and_grad(pair, params, TINY, upstream)[1].flat()
    b = loss_and_grad(pair, params, TINY, upstream)[1].flat()
    assert a.tobytes() == b.tobytes()


def test_chain_locality_on_identity_path():
    cfg = HanConfig(C=4, H=4, W=4, L=2, G=2, c=2)
    params, pair, upstream = case(5, cfg)
    for lp in params.layers:
        lp.cmeu_r2t.Wv[...] = 0.0
    gates = np.zeros((2, 4, 4))
    gates[0, 2, 2] = 1.0
    gates[1, 2, :] = 1.0
    upstream[:, :2, :] = 0.0
    _, cache = forward_cached(pair, params, cfg, gates=gates)
    _, g_in = backward(cache, upstream)
    assert not g_in.rgb[:, :2, :].any() and not g_in.tir[:, :2, :].any()
    np.testing.assert_array_equal(g_in.rgb[:, 2:, :], upstream[:, 2:, :])


def test_relative_error_floor():
    assert max_relative_error(np.array([1e-12]), np.array([0.0])) == pytest.approx(1e-4)
    assert max_relative_error(np.array([2.0]), np.array([1.0])) == 0.5
