"""Dense feed-forward substrate: forward, exact backward, Adam, checks.

Everything is float64. Parameter stores are plain numpy arrays owned by the
caller; training steps mutate them in place, so a store must not be shared
while a step runs.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .serialize import read_container, write_container

ACTIVATIONS = ("relu", "tanh", "identity")

NETWORK_MAGIC = b"MRNN"
NETWORK_VERSION = 1


@dataclass
class DenseLayer:
    weights: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[1],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match out_dim "
                f"{self.weights.shape[1]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("non-finite layer parameters")

    @property
    def in_dim(self):
        return self.weights.shape[0]

    @property
    def out_dim(self):
        return self.weights.shape[1]


@dataclass
class GradientStore:
    d_weights: list
    d_biases: list
    d_input: np.ndarray


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name, z, a):
    if name == "relu":
        # subgradient 0 at the kink
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def init_layers(dims, activations, rng):
    """Glorot-uniform weights (±sqrt(6/(fan_in+fan_out))), zero biases.

    dims: [d0, d1, ..., dL]; activations: one per layer (len(dims) - 1).
    """
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for i, act in enumerate(activations):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return layers


def forward(layers, x, dropout_keep=1.0, train=False, rng=None):
    """Run the stack; returns (output, cache for backward).

    x may be a vector (in_dim,) or a batch (n, in_dim); the output mirrors
    the input's rank. In train mode, inverted dropout runs after every
    hidden activation (never after the last layer): mask/keep scaling at
    train time, nothing at inference, so expectations match. dropout_keep=1
    draws no masks at all.
    """
    if not 0.0 < dropout_keep <= 1.0:
        raise ValueError(f"dropout_keep must be in (0, 1], got {dropout_keep}")
    use_dropout = train and dropout_keep < 1.0
    if use_dropout and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x.reshape(1, -1) if squeeze else x
    inputs, pre_acts, acts, masks = [], [], [], []
    for i, layer in enumerate(layers):
        if h.shape[1] != layer.in_dim:
            raise ValueError(
                f"layer {i}: input dim {h.shape[1]} != expected {layer.in_dim}"
            )
        inputs.append(h)
        z = h @ layer.weights + layer.bias
        a = _activate(layer.activation, z)
        pre_acts.append(z)
        acts.append(a)
        if use_dropout and i < len(layers) - 1:
            mask = (rng.random(a.shape) < dropout_keep).astype(np.float64)
            masks.append(mask)
            h = a * mask / dropout_keep
        else:
            masks.append(None)
            h = a
    cache = {
        "layers": layers,
        "inputs": inputs,
        "pre_acts": pre_acts,
        "acts": acts,
        "masks": masks,
        "dropout_keep": dropout_keep,
        "squeeze": squeeze,
        "in_dim": x.shape[-1],
    }
    out = h[0] if squeeze else h
    return out, cache


def backward(cache, upstream):
    """Exact reverse-mode gradients for every weight, bias, and the input."""
    layers = cache["layers"]
    keep = cache["dropout_keep"]
    upstream = np.asarray(upstream, dtype=np.float64)
    g = upstream.reshape(1, -1) if cache["squeeze"] else upstream
    if g.shape != cache["acts"][-1].shape:
        raise ValueError(
            f"upstream gradient shape {g.shape} does not match output "
            f"{cache['acts'][-1].shape}"
        )
    d_weights = [None] * len(layers)
    d_biases = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        mask = cache["masks"][i]
        if mask is not None:
            g = g * mask / keep
        dz = g * _activation_grad(layers[i].activation, cache["pre_acts"][i], cache["acts"][i])
        d_weights[i] = cache["inputs"][i].T @ dz
        d_biases[i] = dz.sum(axis=0)
        g = dz @ layers[i].weights.T
    d_input = g[0] if cache["squeeze"] else g
    return GradientStore(d_weights, d_biases, d_input)


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class OptimizerState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stability: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_state(params, learning_rate, beta1=0.9, beta2=0.999, eps_stability=1e-8):
    return OptimizerState(
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        eps_stability=eps_stability,
        step=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def optimizer_step(params, grads, state):
    """One Adam update, mutating params (and state) in place.

    params and grads are parallel lists of arrays; shapes must match the
    accumulators created by adam_state. Non-finite gradients abort with a
    diagnostic identifying the offending parameter.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError(
            f"expected {len(state.m)} parameter/gradient arrays, "
            f"got {len(params)}/{len(grads)}"
        )
    for i, g in enumerate(grads):
        if g.shape != state.m[i].shape:
            raise ValueError(
                f"gradient {i} shape {g.shape} != accumulator {state.m[i].shape}"
            )
        if not np.isfinite(g).all():
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise ValueError(
                f"non-finite gradient in parameter {i} ({bad} bad entries)"
            )
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps_stability)
    return params, state


# ---------------------------------------------------------------------------
# Gradient verification


@dataclass
class FDCheckReport:
    max_rel_error: float
    coords_checked: int
    tolerance: float
    worst: tuple  # (param index, flat coordinate, numeric, analytic)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def finite_difference_check(loss_fn, params, analytic_grads, h=1e-5,
                            tolerance=1e-4, max_coords_per_param=25, seed=0):
    """Central-difference check of analytic gradients on sampled coordinates.

    loss_fn() must be a deterministic function of the current params (it is
    re-evaluated with single coordinates perturbed, then restored). The
    relative-error denominator is floored at 1e-6 so coordinates where both
    gradients are essentially zero do not amplify finite-difference noise.
    """
    rng = np.random.default_rng(seed)
    max_rel = 0.0
    worst = None
    checked = 0
    for pi, (p, g) in enumerate(zip(params, analytic_grads)):
        n = p.size
        if n == 0:
            continue
        coords = (
            np.arange(n)
            if n <= max_coords_per_param
            else rng.choice(n, size=max_coords_per_param, replace=False)
        )
        for j in sorted(int(c) for c in coords):
            orig = p.flat[j]
            p.flat[j] = orig + h
            up = loss_fn()
            p.flat[j] = orig - h
            down = loss_fn()
            p.flat[j] = orig
            numeric = (up - down) / (2.0 * h)
            analytic = g.flat[j]
            denom = max(abs(numeric), abs(analytic), 1e-6)
            rel = abs(numeric - analytic) / denom
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (pi, j, numeric, analytic)
    return FDCheckReport(max_rel, checked, tolerance, worst)


# ---------------------------------------------------------------------------
# Checkpoint format


def save_network(path, layers):
    """Write the dense stack to the shared container format (byte-stable)."""
    meta = {
        "kind": "dense-network",
        "activations": [layer.activation for layer in layers],
    }
    arrays = []
    for i, layer in enumerate(layers):
        arrays.append((f"weights_{i:02d}", layer.weights))
        arrays.append((f"bias_{i:02d}", layer.bias))
    write_container(path, NETWORK_MAGIC, NETWORK_VERSION, meta, arrays)


def load_network(path):
    _, meta, arrays = read_container(path, NETWORK_MAGIC, NETWORK_VERSION)
    return layers_from_arrays(meta["activations"], arrays)


def layers_from_arrays(activations, arrays, prefix=""):
    layers = []
    for i, act in enumerate(activations):
        layers.append(
            DenseLayer(
                arrays[f"{prefix}weights_{i:02d}"],
                arrays[f"{prefix}bias_{i:02d}"],
                act,
            )
        )
    return layers


def layers_to_arrays(layers, prefix=""):
    arrays = []
    for i, layer in enumerate(layers):
        arrays.append((f"{prefix}weights_{i:02d}", layer.weights))
        arrays.append((f"{prefix}bias_{i:02d}", layer.bias))
    return arrays
