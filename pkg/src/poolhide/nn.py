"""Fully-connected networks in float64 with hand-written backprop.

Parameters of a model live in one flat array per :class:`ParamKind`. The
canonical order is: layers in definition order, each layer's weight matrix
flattened row-major with shape ``(out, in)``. Biases are concatenated the
same way. Fully-connected layers own no scale parameters.
"""

import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import rng


class ParamKind(str, Enum):
    WEIGHT = "weight"
    BIAS = "bias"
    SCALE = "scale"


KINDS = (ParamKind.WEIGHT, ParamKind.BIAS, ParamKind.SCALE)


class NumericalError(FloatingPointError):
    """Raised when a forward/backward pass or update produces non-finite values."""


# family -> (hidden activation, output head, loss)
ARCH_FAMILIES = {
    "fcn": ("relu", "linear", "cross_entropy"),
    "gen": ("relu", "sigmoid", "mse"),
    "reg": ("relu", "linear", "mse"),
}

_ARCH_RE = re.compile(r"^(?P<family>[a-z]+)-(?P<sizes>\d+(?:-\d+)+)$")


@dataclass(frozen=True)
class ModelSpec:
    arch_id: str
    layer_sizes: tuple
    activation: str = "relu"
    head: str = "linear"
    loss: str = "cross_entropy"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError(f"{self.arch_id}: need at least 2 layer sizes, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ValueError(f"{self.arch_id}: layer sizes must be positive, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.head not in ("linear", "sigmoid"):
            raise ValueError(f"unknown output head {self.head!r}")
        if self.loss not in ("cross_entropy", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")

    @property
    def n_layers(self):
        """Number of affine maps."""
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def output_dim(self):
        return self.layer_sizes[-1]

    def layer_shapes(self):
        return [(o, i) for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:])]

    def counts(self):
        shapes = self.layer_shapes()
        return {
            ParamKind.WEIGHT: sum(o * i for o, i in shapes),
            ParamKind.BIAS: sum(o for o, _ in shapes),
            ParamKind.SCALE: 0,
        }

    def weight_slices(self):
        out, start = [], 0
        for o, i in self.layer_shapes():
            out.append(slice(start, start + o * i))
            start += o * i
        return out

    def bias_slices(self):
        out, start = [], 0
        for o, _ in self.layer_shapes():
            out.append(slice(start, start + o))
            start += o
        return out


def arch_spec(arch_id):
    """Resolve an architecture identifier such as ``fcn-784-200-200-10``.

    Families: ``fcn`` (ReLU hidden, logits, cross-entropy), ``gen`` (ReLU
    hidden, sigmoid output, squared error) and ``reg`` (ReLU hidden, linear
    output, squared error).
    """
    m = _ARCH_RE.match(arch_id)
    if m is None or m.group("family") not in ARCH_FAMILIES:
        raise ValueError(f"unknown architecture {arch_id!r}")
    act, head, loss = ARCH_FAMILIES[m.group("family")]
    sizes = tuple(int(s) for s in m.group("sizes").split("-"))
    return ModelSpec(arch_id, sizes, act, head, loss)


def make_arch_id(family, sizes):
    return f"{family}-" + "-".join(str(int(s)) for s in sizes)


@dataclass
class Model:
    spec: ModelSpec
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        counts = self.spec.counts()
        params = {}
        for kind in KINDS:
            arr = self.params.get(kind)
            arr = np.zeros(counts[kind]) if arr is None else np.asarray(arr, dtype=np.float64)
            if arr.shape != (counts[kind],):
                raise ValueError(
                    f"{self.spec.arch_id}: {kind.value} array has shape {arr.shape}, "
                    f"expected ({counts[kind]},)"
                )
            params[kind] = arr
        self.params = params

    @property
    def weights(self):
        return self.params[ParamKind.WEIGHT]

    @property
    def biases(self):
        return self.params[ParamKind.BIAS]

    def layers(self):
        """(W, b) views per layer; W has shape (out, in)."""
        w, b = self.weights, self.biases
        return [
            (w[ws].reshape(shape), b[bs])
            for shape, ws, bs in zip(
                self.spec.layer_shapes(), self.spec.weight_slices(), self.spec.bias_slices()
            )
        ]

    def copy(self):
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()})

    def flatten(self):
        return np.concatenate([self.params[k] for k in KINDS])

    @classmethod
    def unflatten(cls, spec, flat):
        flat = np.asarray(flat, dtype=np.float64)
        counts = spec.counts()
        if flat.shape != (sum(counts.values()),):
            raise ValueError(f"flat vector of length {flat.size} does not fit {spec.arch_id}")
        params, start = {}, 0
        for kind in KINDS:
            params[kind] = flat[start:start + counts[kind]].copy()
            start += counts[kind]
        return cls(spec, params)

    def equals(self, other):
        """Bit-exact parameter equality."""
        return self.spec == other.spec and all(
            np.array_equal(self.params[k], other.params[k]) for k in KINDS
        )


def init_params(spec, seed):
    """He-normal weights (std sqrt(2 / fan_in)) and zero biases."""
    counts = spec.counts()
    z = rng.normal(seed, rng.INIT, counts[ParamKind.WEIGHT])
    w = np.empty_like(z)
    for (o, i), sl in zip(spec.layer_shapes(), spec.weight_slices()):
        w[sl] = z[sl] * np.sqrt(2.0 / i)
    return Model(spec, {ParamKind.WEIGHT: w})


def _check_inputs(spec, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim or X.shape[0] < 1:
        raise ValueError(f"{spec.arch_id}: expected inputs of shape (n, {spec.input_dim}), got {X.shape}")
    return X


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_trace(model, X):
    spec = model.spec
    acts = [X]
    pre = []
    h = X
    layers = model.layers()
    for idx, (W, b) in enumerate(layers):
        with np.errstate(over="ignore", invalid="ignore"):
            z = h @ W.T + b
        pre.append(z)
        if idx < len(layers) - 1:
            h = np.maximum(z, 0.0) if spec.activation == "relu" else z
        else:
            h = _sigmoid(z) if spec.head == "sigmoid" else z
        acts.append(h)
    if not np.all(np.isfinite(h)):
        raise NumericalError(f"{spec.arch_id}: non-finite activations in forward pass")
    return acts, pre


def forward(model, X):
    """Network outputs (logits or bounded values) for a batch of inputs."""
    X = _check_inputs(model.spec, X)
    acts, _ = _forward_trace(model, X)
    return acts[-1]


def predict(model, X):
    return np.argmax(forward(model, X), axis=1)


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_targets(spec, y, n):
    if spec.loss == "cross_entropy":
        y = np.asarray(y)
        if y.shape != (n,) or not np.issubdtype(y.dtype, np.integer):
            raise ValueError(f"{spec.arch_id}: cross-entropy needs {n} integer class labels")
        if y.min() < 0 or y.max() >= spec.output_dim:
            raise ValueError(f"{spec.arch_id}: labels outside [0, {spec.output_dim})")
        return y
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n, spec.output_dim):
        raise ValueError(f"{spec.arch_id}: regression targets must have shape ({n}, {spec.output_dim})")
    return y


def loss_value(model, X, y):
    X = _check_inputs(model.spec, X)
    y = _check_targets(model.spec, y, X.shape[0])
    out = forward(model, X)
    return _loss(model.spec, out, y)[0]


def _loss(spec, out, y):
    n = out.shape[0]
    if spec.loss == "cross_entropy":
        logp = _log_softmax(out)
        loss = -logp[np.arange(n), y].mean()
        dout = np.exp(logp)
        dout[np.arange(n), y] -= 1.0
        dout /= n
    else:
        diff = out - y
        loss = np.mean(diff * diff)
        dout = 2.0 * diff / diff.size
    return loss, dout


def loss_and_grad(model, X, y):
    """Batch-mean loss and exact gradients, one flat array per kind."""
    spec = model.spec
    X = _check_inputs(spec, X)
    y = _check_targets(spec, y, X.shape[0])
    acts, pre = _forward_trace(model, X)
    loss, delta = _loss(spec, acts[-1], y)
    if not np.isfinite(loss):
        raise NumericalError(f"{spec.arch_id}: non-finite loss")
    if spec.head == "sigmoid":
        out = acts[-1]
        delta = delta * out * (1.0 - out)

    gw = np.empty(spec.counts()[ParamKind.WEIGHT])
    gb = np.empty(spec.counts()[ParamKind.BIAS])
    layers = model.layers()
    wsl, bsl = spec.weight_slices(), spec.bias_slices()
    for idx in range(len(layers) - 1, -1, -1):
        W, _ = layers[idx]
        gw[wsl[idx]] = (delta.T @ acts[idx]).ravel()
        gb[bsl[idx]] = delta.sum(axis=0)
        if idx > 0:
            delta = delta @ W
            if spec.activation == "relu":
                delta = delta * (pre[idx - 1] > 0)
    grads = {ParamKind.WEIGHT: gw, ParamKind.BIAS: gb, ParamKind.SCALE: np.zeros(0)}
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NumericalError(f"{spec.arch_id}: non-finite gradients")
    return float(loss), grads


@dataclass
class OptimizerState:
    kind: str = "sgd"
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def sgd(lr=0.1):
    return OptimizerState("sgd", lr=lr)


def adam(lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    return OptimizerState("adam", lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def make_optimizer(config):
    """Fresh optimizer state from a config mapping (``kind``, ``lr``, ...)."""
    config = dict(config)
    kind = config.pop("kind", "sgd")
    if kind == "sgd":
        return sgd(**config)
    if kind == "adam":
        return adam(**config)
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_step(state, model, grads):
    """One SGD or bias-corrected Adam step. Returns ``(new_model, new_state)``."""
    for kind in KINDS:
        g = grads[kind]
        if g.shape != model.params[kind].shape:
            raise ValueError(f"gradient for {kind.value} has shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite {kind.value} gradient; step refused")

    t = state.step + 1
    params = {}
    m_new, v_new = {}, {}
    for kind in KINDS:
        p, g = model.params[kind], grads[kind]
        if state.kind == "sgd":
            params[kind] = p - state.lr * g
            continue
        m = state.m.get(kind, np.zeros_like(p))
        v = state.v.get(kind, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        params[kind] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        m_new[kind], v_new[kind] = m, v
    new_state = OptimizerState(
        state.kind, state.lr, state.beta1, state.beta2, state.eps, m_new, v_new, t
    )
    return Model(model.spec, params), new_state
