"""Differentiation core: gradient checks, Glorot statistics, model files."""

import numpy as np
import pytest

from swingnet.mlp import (MLPParams, ModelFormatError, ModelVersionError,
                          Normalization, SurrogateModel, add_grads, dxdt_forward,
                          flatten_grads, flatten_params, forward, grad_params,
                          grad_params_of_jvp, init_glorot, jvp_input, load_model,
                          save_model, unflatten_params)

FD_STEP = 1e-5
REL_TOL = 1e-5
ABS_FLOOR = 1e-8


def fd_param_grad(params, theta, i, fn, step=FD_STEP):
    e = np.zeros_like(theta)
    e[i] = step
    return (fn(unflatten_params(params, theta + e))
            - fn(unflatten_params(params, theta - e))) / (2 * step)


# ---------------------------------------------------------------------------
# init_glorot
# ---------------------------------------------------------------------------

def test_glorot_bounds():
    p = init_glorot([2, 4, 3], seed=7)
    for W, (fi, fo) in zip(p.weights, [(2, 4), (4, 3)]):
        bound = np.sqrt(6.0 / (fi + fo))
        assert np.all(np.abs(W) <= bound)
    for b in p.biases:
        assert np.all(b == 0.0)


def test_glorot_seed_determinism():
    p1 = init_glorot([3, 16, 16, 2], seed=99)
    p2 = init_glorot([3, 16, 16, 2], seed=99)
    for W1, W2 in zip(p1.weights, p2.weights):
        assert np.array_equal(W1, W2)
    p3 = init_glorot([3, 16, 16, 2], seed=100)
    assert not np.array_equal(p1.weights[0], p3.weights[0])


def test_glorot_variance_moment():
    """10^4 draws from a 100x100 layer: variance within 10% of 2/(n_in+n_out)."""
    p = init_glorot([100, 100], seed=5)
    sample = p.weights[0].ravel()
    assert sample.size == 10_000
    target = 2.0 / (100 + 100)
    assert abs(sample.var() - target) / target < 0.10


def test_glorot_rejects_bad_dims():
    with pytest.raises(ValueError):
        init_glorot([4], seed=0)
    with pytest.raises(ValueError):
        init_glorot([4, 0, 2], seed=0)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_zero_weights_output_is_bias(rng):
    p = init_glorot([3, 8, 2], seed=0)
    zeroed = unflatten_params(p, np.zeros(p.n_params))
    bias = np.array([0.3, -1.2])
    theta = flatten_params(zeroed)
    theta[-2:] = bias
    p2 = unflatten_params(p, theta)
    out = forward(p2, rng.normal(size=(6, 3)))
    assert np.allclose(out, bias)


def test_single_neuron_identity_chain():
    p = MLPParams((1, 1, 1),
                  (np.ones((1, 1)), np.ones((1, 1))),
                  (np.zeros(1), np.zeros(1)))
    assert forward(p, np.array([[0.0]]))[0, 0] == 0.0   # tanh(0) = 0


def test_lipschitz_bound(rng):
    p = init_glorot([4, 16, 16, 3], seed=3)
    lip = np.prod([np.linalg.norm(W, 2) for W in p.weights])
    x = rng.normal(size=(40, 4))
    eta = 1e-3 * rng.normal(size=(40, 4))
    diff = forward(p, x + eta) - forward(p, x)
    assert np.all(np.linalg.norm(diff, axis=1)
                  <= lip * np.linalg.norm(eta, axis=1) + 1e-12)


def test_forward_shape_validation():
    p = init_glorot([2, 4, 1], seed=0)
    with pytest.raises(ValueError):
        forward(p, np.zeros((5, 3)))


# ---------------------------------------------------------------------------
# reverse-mode parameter gradients
# ---------------------------------------------------------------------------

def test_grad_params_vs_finite_differences(rng):
    p = init_glorot([2, 8, 8, 3], seed=11)
    z0 = rng.normal(size=(7, 2))
    upstream = rng.normal(size=(7, 3))
    theta = flatten_params(p)
    g = flatten_grads(grad_params(p, z0, upstream))

    def obj(pp):
        return float(np.sum(upstream * forward(pp, z0)))

    worst = 0.0
    for i in rng.choice(theta.size, 50, replace=False):
        fd = fd_param_grad(p, theta, i, obj)
        worst = max(worst, abs(fd - g[i]) / max(abs(fd), ABS_FLOOR))
    print(f"\n  reverse-mode worst relative error over 50 probes: {worst:.2e}")
    assert worst < REL_TOL


def test_zero_upstream_zero_gradient(rng):
    p = init_glorot([2, 6, 2], seed=4)
    g = flatten_grads(grad_params(p, rng.normal(size=(5, 2)), np.zeros((5, 2))))
    assert np.all(g == 0.0)


def test_batch_gradient_is_sum_of_samples(rng):
    p = init_glorot([2, 6, 2], seed=4)
    z0 = rng.normal(size=(4, 2))
    upstream = rng.normal(size=(4, 2))
    g_batch = flatten_grads(grad_params(p, z0, upstream))
    g_sum = np.zeros_like(g_batch)
    for j in range(4):
        g_sum += flatten_grads(grad_params(p, z0[j : j + 1], upstream[j : j + 1]))
    assert np.allclose(g_batch, g_sum, atol=1e-12)


# ---------------------------------------------------------------------------
# forward-mode time derivative
# ---------------------------------------------------------------------------

def test_constant_network_zero_derivative(rng):
    p = init_glorot([2, 5, 3], seed=0)
    zeroed = unflatten_params(p, np.zeros(p.n_params))
    d = dxdt_forward(zeroed, rng.normal(size=(6, 2)))
    assert np.all(d == 0.0)


def test_single_tanh_neuron_slope():
    # y = tanh(2 t): dy/dt at t = 0 equals 2
    p = MLPParams((1, 1, 1),
                  (np.array([[2.0]]), np.array([[1.0]])),
                  (np.zeros(1), np.zeros(1)))
    d = dxdt_forward(p, np.array([[0.0]]))
    assert np.isclose(d[0, 0], 2.0, atol=1e-14)


def test_dxdt_vs_finite_differences(rng):
    p = init_glorot([2, 10, 10, 4], seed=21)
    z0 = rng.normal(size=(20, 2))
    an = dxdt_forward(p, z0)
    dt = FD_STEP
    zp, zm = z0.copy(), z0.copy()
    zp[:, 0] += dt
    zm[:, 0] -= dt
    fd = (forward(p, zp) - forward(p, zm)) / (2 * dt)
    rel = np.abs(an - fd) / np.maximum(np.abs(fd), ABS_FLOOR)
    print(f"\n  forward-mode worst relative error over 20 inputs: {rel.max():.2e}")
    assert rel.max() < REL_TOL


def test_dxdt_chain_rule_scaling(rng):
    p = init_glorot([2, 6, 2], seed=9)
    z0 = rng.normal(size=(3, 2))
    base = dxdt_forward(p, z0, t_chain=1.0)
    scaled = dxdt_forward(p, z0, t_chain=0.1)
    assert np.allclose(scaled, 0.1 * base, atol=1e-14)


def test_fd_quotient_converges_second_order(rng):
    """Central differences of forward approach the tangent at O(step^2)."""
    p = init_glorot([2, 8, 3], seed=2)
    z0 = rng.normal(size=(5, 2))
    an = dxdt_forward(p, z0)

    def fd_err(step):
        zp, zm = z0.copy(), z0.copy()
        zp[:, 0] += step
        zm[:, 0] -= step
        return np.max(np.abs((forward(p, zp) - forward(p, zm)) / (2 * step) - an))

    e1, e2 = fd_err(1e-3), fd_err(5e-4)
    assert 3.0 < e1 / e2 < 5.0


# ---------------------------------------------------------------------------
# parameter gradients of the time derivative
# ---------------------------------------------------------------------------

def test_grad_of_jvp_vs_finite_differences(rng):
    p = init_glorot([2, 8, 8, 3], seed=13)
    z0 = rng.normal(size=(6, 2))
    v = np.zeros_like(z0)
    v[:, 0] = 1.0
    upstream = rng.normal(size=(6, 3))
    theta = flatten_params(p)
    g = flatten_grads(grad_params_of_jvp(p, z0, v, upstream))

    def obj(pp):
        return float(np.sum(upstream * jvp_input(pp, z0, v)))

    worst = 0.0
    for i in rng.choice(theta.size, 20, replace=False):
        fd = fd_param_grad(p, theta, i, obj)
        worst = max(worst, abs(fd - g[i]) / max(abs(fd), ABS_FLOOR))
    print(f"\n  forward-over-reverse worst relative error: {worst:.2e}")
    assert worst < 1e-4


def test_grad_of_jvp_zero_upstream(rng):
    p = init_glorot([2, 6, 2], seed=1)
    z0 = rng.normal(size=(4, 2))
    v = np.zeros_like(z0)
    v[:, 0] = 1.0
    g = flatten_grads(grad_params_of_jvp(p, z0, v, np.zeros((4, 2))))
    assert np.all(g == 0.0)


def test_grad_of_jvp_linear_net_closed_form():
    """y = w2 (w1 t + b1) + b2 gives dy/dt = w2 w1, so the parameter
    gradient of dy/dt is (w2, w1, 0, 0)."""
    w1, w2 = 3.0, 5.0
    p = MLPParams((1, 1, 1),
                  (np.array([[w1]]), np.array([[w2]])),
                  (np.array([0.7]), np.array([0.2])),
                  activation="identity")
    gW, gb = grad_params_of_jvp(p, np.array([[2.0]]),
                                np.array([[1.0]]), np.array([[1.0]]))
    assert np.isclose(gW[0][0, 0], w2)
    assert np.isclose(gW[1][0, 0], w1)
    assert gb[0][0] == 0.0 and gb[1][0] == 0.0


def test_differentiation_determinism(rng):
    p = init_glorot([2, 16, 4], seed=8)
    z0 = rng.normal(size=(9, 2))
    u = rng.normal(size=(9, 4))
    v = np.zeros_like(z0)
    v[:, 0] = 1.0
    assert np.array_equal(forward(p, z0), forward(p, z0))
    g1 = flatten_grads(grad_params(p, z0, u))
    g2 = flatten_grads(grad_params(p, z0, u))
    assert np.array_equal(g1, g2)
    j1 = flatten_grads(grad_params_of_jvp(p, z0, v, u))
    j2 = flatten_grads(grad_params_of_jvp(p, z0, v, u))
    assert np.array_equal(j1, j2)


def test_add_grads_scaling(rng):
    p = init_glorot([2, 4, 2], seed=0)
    z0 = rng.normal(size=(3, 2))
    u = rng.normal(size=(3, 2))
    g = grad_params(p, z0, u)
    combo = add_grads(g, g, scale=2.0)
    assert np.allclose(flatten_grads(combo), 3.0 * flatten_grads(g))


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def _toy_model():
    params = init_glorot([2, 5, 3], seed=17)
    norm = Normalization(
        in_shift=np.array([10.0, 5.0]),
        in_scale=np.array([10.0, 5.0]),
        out_shift=np.array([0.1, -0.2, 0.0]),
        out_scale=np.array([0.5, 0.5, 0.01]),
    )
    return SurrogateModel(params, norm, meta={"case": "toy", "seed": 17})


def test_model_roundtrip_bit_exact(tmp_path):
    model = _toy_model()
    path = tmp_path / "m.swnn"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.params.layer_dims == model.params.layer_dims
    for a, b in zip(loaded.params.weights, model.params.weights):
        assert np.array_equal(a, b)
    for a, b in zip(loaded.params.biases, model.params.biases):
        assert np.array_equal(a, b)
    for attr in ("in_shift", "in_scale", "out_shift", "out_scale"):
        assert np.array_equal(getattr(loaded.norm, attr), getattr(model.norm, attr))
    assert loaded.meta == model.meta
    # and the file bytes themselves are reproducible
    path2 = tmp_path / "m2.swnn"
    save_model(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_model_bad_magic(tmp_path):
    path = tmp_path / "bad.swnn"
    save_model(_toy_model(), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(raw)
    with pytest.raises(ModelFormatError, match="magic"):
        load_model(path)


def test_model_version_mismatch(tmp_path):
    path = tmp_path / "ver.swnn"
    save_model(_toy_model(), path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(raw)
    with pytest.raises(ModelVersionError, match="version"):
        load_model(path)


def test_surrogate_predict_applies_normalization(rng):
    model = _toy_model()
    inputs = np.array([[0.0, 0.0], [20.0, 10.0]])
    z0 = (inputs - model.norm.in_shift) / model.norm.in_scale
    expected = model.norm.out_shift + model.norm.out_scale * forward(model.params, z0)
    assert np.allclose(model.predict(inputs), expected)


def test_predict_with_dt_matches_finite_difference():
    model = _toy_model()
    q = np.array([[3.0, 5.5]])
    _, dt_an = model.predict_with_dt(q)
    step = 1e-5
    fd = (model.predict(q + [[step, 0]]) - model.predict(q - [[step, 0]])) / (2 * step)
    assert np.allclose(dt_an, fd, rtol=1e-6, atol=1e-10)
