"""MLP forward/backward, scaling, iRPROP- rules, training loop, model file.

Gradients are pinned against a central finite-difference oracle; the RPROP
step rules against a scalar hand simulation of the published update table.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hybridmpc import mlp
from hybridmpc.errors import TrainingDivergedError

# sigma(0.5) for the 1-1-1 toy net: 2/(1+e^-0.5) - 1, hand value.
SIGMA_HALF = 0.24491866240370913


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def _zero_net(sizes):
    return mlp.MlpNetwork(
        layer_sizes=sizes,
        weights=[np.zeros((i, o)) for i, o in zip(sizes[:-1], sizes[1:])],
        biases=[np.zeros(o) for o in sizes[1:]],
    )


def _ones_net(sizes):
    return mlp.MlpNetwork(
        layer_sizes=sizes,
        weights=[np.ones((i, o)) for i, o in zip(sizes[:-1], sizes[1:])],
        biases=[np.zeros(o) for o in sizes[1:]],
    )


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_zero_network_maps_zero_to_zero():
    net = _zero_net((12, 50, 50, 50, 3))
    assert np.array_equal(mlp.forward(net, np.zeros(12)), np.zeros(3))


def test_toy_net_hand_value():
    # 1-1-1, unit weights, zero biases: out = sigma(0.5) through the single
    # hidden unit, identity output.
    net = _ones_net((1, 1, 1))
    out = mlp.forward(net, np.array([0.5]))
    assert out[0] == pytest.approx(SIGMA_HALF, rel=1e-15)
    assert out[0] == pytest.approx(math.tanh(0.25), rel=1e-15)  # same function


def test_hidden_activations_saturate():
    net = _ones_net((1, 4, 1))
    big = mlp.bipolar_sigmoid(np.array([1e6, -1e6]))
    assert np.all(np.abs(np.abs(big) - 1.0) < 1e-9)
    # Saturated hidden layer: output = sum of 4 activations ~ +-4.
    out = mlp.forward(net, np.array([1e6]))
    assert out[0] == pytest.approx(4.0, abs=1e-8)


def test_forward_batch_matches_per_sample(rng):
    net = mlp.init_network((5, 7, 3), seed=2)
    x = rng.normal(size=(11, 5))
    batch = mlp.forward(net, x)
    rows = np.stack([mlp.forward(net, xi) for xi in x])
    # matrix-matrix and matrix-vector BLAS paths order the sums differently,
    # so agreement is to rounding, not bitwise
    assert_allclose(batch, rows, rtol=1e-13, atol=1e-15)


def test_forward_width_validation():
    net = mlp.init_network((4, 3, 2), seed=0)
    with pytest.raises(ValueError):
        mlp.forward(net, np.zeros(5))


def test_init_network_seeded_and_bounded():
    a = mlp.init_network(seed=7)
    b = mlp.init_network(seed=7)
    c = mlp.init_network(seed=8)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert any(not np.array_equal(x, y) for x, y in zip(a.weights, c.weights))
    for w, (n_in, n_out) in zip(a.weights, zip(a.layer_sizes[:-1], a.layer_sizes[1:])):
        assert np.abs(w).max() <= np.sqrt(6.0 / (n_in + n_out))
    assert all(np.array_equal(bref, np.zeros_like(bref)) for bref in a.biases)


def test_network_validation():
    with pytest.raises(ValueError):
        _zero_net((5,))
    with pytest.raises(ValueError):
        mlp.MlpNetwork(layer_sizes=(2, 3), weights=[np.zeros((2, 4))], biases=[np.zeros(3)])
    with pytest.raises(ValueError):
        mlp.MlpNetwork(layer_sizes=(2, 3), weights=[np.full((2, 3), np.nan)], biases=[np.zeros(3)])


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_zero_error_gives_zero_gradient(rng):
    net = mlp.init_network((3, 5, 2), seed=3)
    x = rng.normal(size=(4, 3))
    y = mlp.forward(net, x)
    loss, gw, gb = mlp.backward(net, x, y)
    assert loss == 0.0
    assert all(np.array_equal(g, np.zeros_like(g)) for g in gw + gb)


def test_output_bias_gradient_is_error_vector(rng):
    net = mlp.init_network((3, 5, 2), seed=4)
    x = rng.normal(size=3)
    y = rng.normal(size=2)
    _, _, gb = mlp.backward(net, x, y)
    assert_allclose(gb[-1], mlp.forward(net, x) - y, atol=0)


def test_gradient_matches_finite_differences(rng):
    """Central FD oracle (h = 1e-6): relative agreement <= 1e-6 on every
    parameter of a random small net over a batch."""
    net = mlp.init_network((4, 6, 5, 3), seed=42)
    x = rng.normal(size=(7, 4))
    y = rng.normal(size=(7, 3))

    def loss():
        pred = mlp.forward(net, x)
        return float(0.5 * np.sum((pred - y) ** 2) / x.shape[0])

    base, gw, gb = mlp.backward(net, x, y)
    assert base == pytest.approx(loss(), rel=1e-15)
    h = 1e-6
    worst = 0.0
    for arr, grads in [(net.weights, gw), (net.biases, gb)]:
        for param, g in zip(arr, grads):
            for idx in np.ndindex(param.shape):
                orig = param[idx]
                param[idx] = orig + h
                lp = loss()
                param[idx] = orig - h
                lm = loss()
                param[idx] = orig
                fd = (lp - lm) / (2.0 * h)
                denom = max(abs(fd), abs(g[idx]), 1e-8)
                worst = max(worst, abs(fd - g[idx]) / denom)
    assert worst <= 1e-6


# ---------------------------------------------------------------------------
# scaler
# ---------------------------------------------------------------------------


def test_scaler_roundtrip_and_range(rng):
    inputs = rng.normal(size=(40, 12)) * rng.uniform(0.1, 50.0, 12)
    targets = rng.normal(size=(40, 3)) * 80.0
    sc = mlp.Scaler.fit(inputs, targets)
    si = sc.scale_inputs(inputs)
    st = sc.scale_targets(targets)
    assert si.min() >= -1.0 and si.max() <= 1.0
    assert st.min() >= -1.0 and st.max() <= 1.0
    assert np.abs(sc.unscale_inputs(si) - inputs).max() < 1e-12
    assert np.abs(sc.unscale_targets(st) - targets).max() < 1e-12


def test_scaler_pads_constant_feature():
    inputs = np.zeros((5, 2))
    inputs[:, 1] = np.linspace(0, 1, 5)
    targets = np.full((5, 1), 3.0)
    sc = mlp.Scaler.fit(inputs, targets)
    assert sc.input_max[0] > sc.input_min[0]
    # The constant value maps to the band center and comes back exactly.
    assert sc.scale_inputs(inputs)[0, 0] == 0.0
    assert sc.unscale_targets(sc.scale_targets(targets))[0, 0] == 3.0


def test_scaler_validation():
    with pytest.raises(ValueError):
        mlp.Scaler(input_min=np.ones(2), input_max=np.ones(2),
                   target_min=np.zeros(1), target_max=np.ones(1))


# ---------------------------------------------------------------------------
# iRPROP- rules
# ---------------------------------------------------------------------------


def test_rprop_step_growth_and_flip_rules():
    """Linear 1-1 net on a single sample reproduces the scalar hand
    simulation: same-sign epochs grow the step by eta+ exactly; the first
    overshoot halves it and skips the move (no revert)."""
    net = mlp.MlpNetwork(layer_sizes=(1, 1), weights=[np.zeros((1, 1))], biases=[np.zeros(1)])
    cfg = mlp.RpropConfig(max_epochs=1)
    state = mlp.RpropState.fresh(net, cfg.delta_init)
    x = np.array([[1.0]])
    y = np.array([[2.0]])

    pred = lambda: float(net.weights[0][0, 0] + net.biases[0][0])
    deltas = []
    preds = []
    flip_epoch = None
    for epoch in range(40):
        before = pred()
        mlp.rprop_epoch(net, x, y, state, cfg)
        deltas.append(float(state.delta_w[0][0, 0]))
        preds.append(pred())
        if flip_epoch is None and before > 2.0:
            flip_epoch = epoch
            # overshoot detected before this epoch ran: iRPROP- must have
            # halved the step and skipped the move for both parameters
            assert deltas[-1] == pytest.approx(deltas[-2] * cfg.eta_minus, rel=1e-12)
            assert preds[-1] == before
            break
        if epoch == 0:
            assert deltas[0] == cfg.delta_init  # sign(0) epoch: step kept
        elif before < 2.0:
            assert deltas[-1] == pytest.approx(min(deltas[-2] * cfg.eta_plus, cfg.delta_max), rel=1e-12)
    assert flip_epoch is not None
    # bounds held throughout
    assert all(cfg.delta_min <= d <= cfg.delta_max for d in deltas)


def test_rprop_zero_gradient_leaves_parameter_alone():
    # Exact fit: w=1, b=0 reproduces y=x through a single linear layer.
    net = mlp.MlpNetwork(layer_sizes=(1, 1), weights=[np.array([[1.0]])], biases=[np.zeros(1)])
    cfg = mlp.RpropConfig(max_epochs=1)
    state = mlp.RpropState.fresh(net, cfg.delta_init)
    x = np.array([[0.3], [-0.7]])
    _, m = mlp.rprop_epoch(net, x, x.copy(), state, cfg)
    assert m == 0.0
    assert net.weights[0][0, 0] == 1.0
    assert net.biases[0][0] == 0.0
    assert state.delta_w[0][0, 0] == cfg.delta_init


def test_training_is_seed_deterministic():
    x = np.linspace(-1, 1, 50).reshape(-1, 1)
    runs = []
    for _ in range(2):
        net = mlp.init_network((1, 6, 1), seed=11)
        best, hist = mlp.train(net, x, x.copy(), mlp.RpropConfig(max_epochs=60))
        runs.append((best, hist))
    (a, ha), (b, hb) = runs
    assert ha == hb
    assert all(np.array_equal(w1, w2) for w1, w2 in zip(a.weights, b.weights))
    assert all(np.array_equal(b1, b2) for b1, b2 in zip(a.biases, b.biases))


# ---------------------------------------------------------------------------
# train loop
# ---------------------------------------------------------------------------


def test_learns_identity_map():
    x = np.linspace(-1, 1, 100).reshape(-1, 1)
    net = mlp.init_network((1, 8, 1), seed=5)
    best, hist = mlp.train(net, x, x.copy(), mlp.RpropConfig(max_epochs=200, target_mse=1e-4))
    assert min(hist) <= 1e-4
    assert len(hist) <= 200
    # early stop: history ends at the first epoch at or below target
    assert hist[-1] <= 1e-4
    assert all(m > 1e-4 for m in hist[:-1])


def test_identical_samples_converge_toward_zero():
    x = np.tile([[0.3, -0.2]], (10, 1))
    y = np.tile([[0.5]], (10, 1))
    net = mlp.init_network((2, 4, 1), seed=9)
    _, hist = mlp.train(net, x, y, mlp.RpropConfig(max_epochs=120))
    h = np.array(hist)
    rmin = np.minimum.accumulate(h)
    # Trend is monotone (running minimum keeps improving early) and the
    # single-point regression bottoms out near zero; individual epochs may
    # oscillate, which is inherent to sign-based steps.
    assert rmin[29] < rmin[4] < rmin[0]
    assert h.min() < 1e-10
    assert h[-1] < 1e-6


def test_best_checkpoint_returned():
    x = np.linspace(-1, 1, 60).reshape(-1, 1)
    net = mlp.init_network((1, 6, 1), seed=13)
    best, hist = mlp.train(net, x, x.copy(), mlp.RpropConfig(max_epochs=80))
    assert mlp.mse(best, x, x.copy()) == min(hist)


def test_plateau_restarts_step_schedule():
    x = np.linspace(-1, 1, 100).reshape(-1, 1)
    net = mlp.init_network((1, 8, 1), seed=5)
    state = mlp.RpropState.fresh(net, 0.01)
    cfg = mlp.RpropConfig(max_epochs=300, plateau_epochs=5, adaptive_factor=0.5)
    mlp.train(net, x, x.copy(), cfg, state=state)
    assert state.delta_seed < 0.01  # at least one restart fired
    # and the seed shrank by exact powers of the adaptive factor
    ratio = math.log(state.delta_seed / 0.01, 0.5)
    assert ratio == pytest.approx(round(ratio), abs=1e-9)


def test_reseed_resets_state():
    net = mlp.init_network((2, 3, 1), seed=1)
    state = mlp.RpropState.fresh(net, 0.01)
    state.grad_w_prev[0][:] = 1.0
    state.delta_w[0][:] = 0.9
    state.reseed(0.005)
    assert np.all(state.delta_w[0] == 0.005)
    assert np.all(state.grad_w_prev[0] == 0.0)
    assert state.delta_seed == 0.005


def test_training_diverged_raises():
    net = mlp.init_network((1, 2, 1), seed=0)
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError):
        mlp.train(net, np.array([[1.0]]), np.array([[1e200]]), mlp.RpropConfig(max_epochs=5))


def test_train_input_validation():
    net = mlp.init_network((1, 2, 1), seed=0)
    with pytest.raises(ValueError):
        mlp.train(net, np.zeros((0, 1)), np.zeros((0, 1)))
    with pytest.raises(ValueError):
        mlp.train(net, np.zeros((3, 1)), np.zeros((2, 1)))


def test_rprop_config_validation():
    with pytest.raises(ValueError):
        mlp.RpropConfig(eta_minus=1.5)
    with pytest.raises(ValueError):
        mlp.RpropConfig(delta_init=2.0, delta_max=1.0)
    with pytest.raises(ValueError):
        mlp.RpropConfig(adaptive_factor=0.0)


# ---------------------------------------------------------------------------
# model file
# ---------------------------------------------------------------------------


def test_model_file_roundtrip(tmp_path, rng):
    net = mlp.init_network(seed=21)
    inputs = rng.normal(size=(30, 12))
    targets = rng.normal(size=(30, 3))
    scaler = mlp.Scaler.fit(inputs, targets)
    path = tmp_path / "model.bin"
    mlp.save_model(path, net, scaler)
    net2, scaler2 = mlp.load_model(path)
    assert net2.layer_sizes == net.layer_sizes
    assert all(np.array_equal(a, b) for a, b in zip(net.weights, net2.weights))
    assert all(np.array_equal(a, b) for a, b in zip(net.biases, net2.biases))
    for name in ("input_min", "input_max", "target_min", "target_max"):
        assert np.array_equal(getattr(scaler, name), getattr(scaler2, name))
    x = rng.normal(size=12)
    assert np.array_equal(mlp.forward(net, x), mlp.forward(net2, x))


def test_model_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b'{"format": "something-else"}\n')
    with pytest.raises(ValueError):
        mlp.load_model(p)
    net = mlp.init_network((2, 3, 1), seed=0)
    scaler = mlp.Scaler.fit(np.random.default_rng(0).normal(size=(4, 2)), np.zeros((4, 1)) + [[1.0], [2.0], [3.0], [4.0]])
    good = tmp_path / "good.bin"
    mlp.save_model(good, net, scaler)
    data = good.read_bytes()
    trunc = tmp_path / "trunc.bin"
    trunc.write_bytes(data[:-16])
    with pytest.raises(ValueError):
        mlp.load_model(trunc)
