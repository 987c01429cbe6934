"""Fully connected network with bipolar-sigmoid hidden layers + iRPROP-.

The distilled torque policy is a plain MLP (default 12 -> 50 -> 50 -> 50 -> 3)
mapping scaled measurements to scaled actuator torques.  Training is
full-batch resilient backpropagation in the iRPROP- variant: each parameter
carries its own step size adapted from gradient signs alone, which makes the
procedure invariant to the loss scale.  A restart-style schedule shrinks the
step-size seed whenever the loss plateaus, standing in for the adaptive rate
factor of the original recipe.

Everything here is numpy and deterministic: same seed, same data, same
parameters bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import TrainingDivergedError

LAYER_SIZES_DEFAULT = (12, 50, 50, 50, 3)


def bipolar_sigmoid(x):
    """sigma(x) = 2 / (1 + exp(-x)) - 1, elementwise; odd, range (-1, 1).

    Computed as tanh(x/2) (the same function), which saturates cleanly
    instead of overflowing exp for large negative arguments.
    """
    return np.tanh(0.5 * np.asarray(x, dtype=np.float64))


def bipolar_sigmoid_prime(s):
    """Derivative expressed through the activation value: (1 - s^2) / 2."""
    return 0.5 * (1.0 - np.square(s))


@dataclass
class MlpNetwork:
    """Weights and biases; ``weights[k]`` maps layer k to k+1, shape (in, out)."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2 or any(n < 1 for n in sizes):
            raise ValueError("layer_sizes must list at least input and output width")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("parameter count does not match layer_sizes")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise ValueError(f"layer {k} parameter shapes do not match layer_sizes")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k} has non-finite parameters")
        self.layer_sizes = sizes

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(
            layer_sizes=self.layer_sizes,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def init_network(layer_sizes=LAYER_SIZES_DEFAULT, seed: int = 0) -> MlpNetwork:
    """Glorot-uniform weights (+- sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    sizes = tuple(int(n) for n in layer_sizes)
    weights = []
    biases = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MlpNetwork(layer_sizes=sizes, weights=weights, biases=biases)


def _activations(net: MlpNetwork, x: np.ndarray) -> list[np.ndarray]:
    """Layer outputs for a (N, n_in) batch; last entry is the linear output."""
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        h = z if k == last else bipolar_sigmoid(z)
        acts.append(h)
    return acts


def forward(net: MlpNetwork, scaled_input) -> np.ndarray:
    """Network output for one (n_in,) sample or an (N, n_in) batch."""
    x = np.asarray(scaled_input, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.layer_sizes[0]:
        raise ValueError(f"input width {x.shape[1]} != {net.layer_sizes[0]}")
    out = _activations(net, x)[-1]
    return out[0] if single else out


def mse(net: MlpNetwork, inputs, targets) -> float:
    """Mean squared error over all samples and output components."""
    pred = forward(net, inputs)
    return float(np.mean(np.square(pred - np.asarray(targets, dtype=np.float64))))


def backward(net: MlpNetwork, inputs, targets):
    """Gradient of mean_n 1/2 ||f(x_n) - y_n||^2 for every weight and bias.

    For a single sample this is the plain half-squared-error gradient, so the
    output-layer bias gradient equals the output error vector.  Returns
    (loss, grads_w, grads_b); only gradient *signs* matter to RPROP, so the
    1/N batch normalization is a reporting convention, not a tuning knob.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
        y = y[None, :]
    n = x.shape[0]
    acts = _activations(net, x)
    err = acts[-1] - y
    loss = float(0.5 * np.sum(np.square(err)) / n)

    grads_w = [np.empty_like(w) for w in net.weights]
    grads_b = [np.empty_like(b) for b in net.biases]
    delta = err / n
    for k in range(len(net.weights) - 1, -1, -1):
        grads_w[k] = acts[k].T @ delta
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k].T) * bipolar_sigmoid_prime(acts[k])
    return loss, grads_w, grads_b


# ---------------------------------------------------------------------------
# feature scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scaler:
    """Per-feature min/max maps onto [-1, 1] for inputs and targets."""

    input_min: np.ndarray
    input_max: np.ndarray
    target_min: np.ndarray
    target_max: np.ndarray

    def __post_init__(self) -> None:
        for name in ("input_min", "input_max", "target_min", "target_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.input_min.shape != self.input_max.shape or self.target_min.shape != self.target_max.shape:
            raise ValueError("min/max shapes disagree")
        if np.any(self.input_max <= self.input_min) or np.any(self.target_max <= self.target_min):
            raise ValueError("scaler requires max > min per feature")

    @staticmethod
    def fit(inputs, targets, pad: float = 0.5) -> "Scaler":
        """Fit ranges on data; a constant feature gets a symmetric +-pad range
        so the map stays invertible."""
        def ranges(a):
            a = np.asarray(a, dtype=np.float64)
            lo = a.min(axis=0)
            hi = a.max(axis=0)
            flat = hi - lo <= 0.0
            lo = np.where(flat, lo - pad, lo)
            hi = np.where(flat, hi + pad, hi)
            return lo, hi

        in_lo, in_hi = ranges(inputs)
        tg_lo, tg_hi = ranges(targets)
        return Scaler(input_min=in_lo, input_max=in_hi, target_min=tg_lo, target_max=tg_hi)

    @staticmethod
    def _scale(a, lo, hi):
        return 2.0 * (np.asarray(a, dtype=np.float64) - lo) / (hi - lo) - 1.0

    @staticmethod
    def _unscale(a, lo, hi):
        return lo + (np.asarray(a, dtype=np.float64) + 1.0) * (hi - lo) / 2.0

    def scale_inputs(self, x):
        return self._scale(x, self.input_min, self.input_max)

    def unscale_inputs(self, x):
        return self._unscale(x, self.input_min, self.input_max)

    def scale_targets(self, y):
        return self._scale(y, self.target_min, self.target_max)

    def unscale_targets(self, y):
        return self._unscale(y, self.target_min, self.target_max)


# ---------------------------------------------------------------------------
# iRPROP- training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RpropConfig:
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta_init: float = 0.01
    delta_min: float = 1e-6
    delta_max: float = 1.0
    adaptive_factor: float = 0.5
    plateau_epochs: int = 20
    max_epochs: int = 500
    target_mse: float = 0.0

    def __post_init__(self) -> None:
        if not (0.0 < self.eta_minus < 1.0 < self.eta_plus):
            raise ValueError("need 0 < eta_minus < 1 < eta_plus")
        if not (0.0 < self.delta_min <= self.delta_init <= self.delta_max):
            raise ValueError("need 0 < delta_min <= delta_init <= delta_max")
        if not (0.0 < self.adaptive_factor <= 1.0):
            raise ValueError("adaptive_factor must be in (0, 1]")
        if self.plateau_epochs < 1 or self.max_epochs < 1:
            raise ValueError("epoch counts must be >= 1")


@dataclass
class RpropState:
    """Per-parameter step sizes and previous-gradient memory."""

    delta_w: list[np.ndarray]
    delta_b: list[np.ndarray]
    grad_w_prev: list[np.ndarray]
    grad_b_prev: list[np.ndarray]
    delta_seed: float

    @staticmethod
    def fresh(net: MlpNetwork, delta_init: float) -> "RpropState":
        return RpropState(
            delta_w=[np.full_like(w, delta_init) for w in net.weights],
            delta_b=[np.full_like(b, delta_init) for b in net.biases],
            grad_w_prev=[np.zeros_like(w) for w in net.weights],
            grad_b_prev=[np.zeros_like(b) for b in net.biases],
            delta_seed=delta_init,
        )

    def reseed(self, delta_init: float) -> None:
        """Restart the schedule: reset every step size, forget gradient signs."""
        for a in self.delta_w:
            a.fill(delta_init)
        for a in self.delta_b:
            a.fill(delta_init)
        for a in self.grad_w_prev:
            a.fill(0.0)
        for a in self.grad_b_prev:
            a.fill(0.0)
        self.delta_seed = delta_init


def _rprop_update(param, grad, grad_prev, delta, config: RpropConfig) -> None:
    """In-place iRPROP- rule for one parameter array."""
    sign_product = np.sign(grad) * np.sign(grad_prev)
    grew = sign_product > 0.0
    flipped = sign_product < 0.0
    delta[grew] = np.minimum(delta[grew] * config.eta_plus, config.delta_max)
    delta[flipped] = np.maximum(delta[flipped] * config.eta_minus, config.delta_min)
    # iRPROP-: after a sign flip the step is skipped for that parameter and
    # its gradient memory is cleared (no weight revert).
    grad = grad.copy()
    grad[flipped] = 0.0
    param -= np.sign(grad) * delta
    grad_prev[...] = grad


def rprop_epoch(net: MlpNetwork, inputs, targets, state: RpropState, config: RpropConfig):
    """One full-batch iRPROP- epoch in place; returns (net, post-update MSE)."""
    _, grads_w, grads_b = backward(net, inputs, targets)
    for k in range(len(net.weights)):
        _rprop_update(net.weights[k], grads_w[k], state.grad_w_prev[k], state.delta_w[k], config)
        _rprop_update(net.biases[k], grads_b[k], state.grad_b_prev[k], state.delta_b[k], config)
    return net, mse(net, inputs, targets)


def train(net: MlpNetwork, inputs, targets, config: RpropConfig | None = None,
          state: RpropState | None = None, callback=None):
    """Full-batch training until target_mse or max_epochs.

    Returns (best network, per-epoch MSE history).  The best-MSE parameters
    are checkpointed every epoch and returned even if later epochs regress.
    When the running best fails to improve for ``plateau_epochs`` epochs the
    step-size schedule restarts at ``delta_seed * adaptive_factor``.
    Raises TrainingDivergedError on a non-finite loss.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.size == 0 or x.shape[0] != y.shape[0]:
        raise ValueError("training set is empty or inputs/targets disagree")
    if config is None:
        config = RpropConfig()
    if state is None:
        state = RpropState.fresh(net, config.delta_init)

    history: list[float] = []
    best = net.copy()
    best_mse = np.inf
    since_best = 0
    for epoch in range(config.max_epochs):
        net, m = rprop_epoch(net, x, y, state, config)
        if not np.isfinite(m):
            raise TrainingDivergedError(
                f"non-finite training loss at epoch {epoch + 1} "
                f"(best so far {best_mse:.6g} over {len(history)} epochs)"
            )
        history.append(m)
        if m < best_mse:
            best_mse = m
            best = net.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.plateau_epochs:
                state.reseed(state.delta_seed * config.adaptive_factor)
                since_best = 0
        if callback is not None:
            callback(epoch, m)
        if m <= config.target_mse:
            break
    return best, history


# ---------------------------------------------------------------------------
# model file round trip
# ---------------------------------------------------------------------------

_MODEL_MAGIC = "mlp-model-v1"


def _as_list(a: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(a).ravel()]


def save_model(path, net: MlpNetwork, scaler: Scaler) -> None:
    """One JSON header line + float64 little-endian parameter block."""
    header = {
        "format": _MODEL_MAGIC,
        "layer_sizes": list(net.layer_sizes),
        "hidden_activation": "bipolar_sigmoid",
        "output_activation": "identity",
        "scaler": {
            "input_min": _as_list(scaler.input_min),
            "input_max": _as_list(scaler.input_max),
            "target_min": _as_list(scaler.target_min),
            "target_max": _as_list(scaler.target_max),
        },
    }
    blob = np.concatenate(
        [a.ravel() for pair in zip(net.weights, net.biases) for a in pair]
    ).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob.tobytes())


def load_model(path):
    """Inverse of save_model: returns (MlpNetwork, Scaler)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format") != _MODEL_MAGIC:
        raise ValueError(f"not a model file: format {header.get('format')!r}")
    sizes = tuple(int(n) for n in header["layer_sizes"])
    params = np.frombuffer(blob, dtype="<f8")
    expected = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    if params.size != expected:
        raise ValueError(f"model file holds {params.size} parameters, expected {expected}")
    weights = []
    biases = []
    ofs = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(params[ofs:ofs + n_in * n_out].reshape(n_in, n_out).copy())
        ofs += n_in * n_out
        biases.append(params[ofs:ofs + n_out].copy())
        ofs += n_out
    sc = header["scaler"]
    scaler = Scaler(
        input_min=np.array(sc["input_min"]),
        input_max=np.array(sc["input_max"]),
        target_min=np.array(sc["target_min"]),
        target_max=np.array(sc["target_max"]),
    )
    net = MlpNetwork(layer_sizes=sizes, weights=weights, biases=biases)
    return net, scaler
