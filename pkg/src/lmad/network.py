"""Dense feedforward networks with tanh hidden layers.

Parameters live in one flat float64 vector. Per layer the weight matrix
(shape ``fan_out x fan_in``, row-major) comes first, then the bias vector;
layers follow in order from input to output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODEL_FORMAT = "lmad-model"
MODEL_VERSION = 1

HIDDEN_ACTIVATIONS = ("tanh", "linear")
MODES = ("regressor", "autoencoder")
INITS = ("glorot", "nguyen-widrow")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_layers: tuple[int, ...]
    output_dim: int
    hidden_activation: str = "tanh"
    output_activation: str = "linear"
    mode: str = "regressor"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        dims = (self.input_dim, *self.hidden_layers, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer dimensions must be >= 1, got {dims}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation != "linear":
            raise ValueError("only a linear output activation is supported")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.hidden_layers and self.hidden_activation != "linear":
            # an empty hidden stack is only meaningful as a plain linear model
            raise ValueError("hidden_layers must be non-empty for a tanh network")
        if self.mode == "autoencoder" and self.input_dim != self.output_dim:
            raise ValueError("autoencoder mode requires input_dim == output_dim")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for every layer."""
        dims = (self.input_dim, *self.hidden_layers, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def param_count(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_dims)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_layers": list(self.hidden_layers),
            "output_dim": self.output_dim,
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_layers=tuple(d["hidden_layers"]),
            output_dim=int(d["output_dim"]),
            hidden_activation=d.get("hidden_activation", "tanh"),
            output_activation=d.get("output_activation", "linear"),
            mode=d.get("mode", "regressor"),
        )


@dataclass
class Network:
    spec: NetworkSpec
    params: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64).ravel()
        if self.params.size != self.spec.param_count:
            raise ValueError(
                f"expected {self.spec.param_count} parameters, got {self.params.size}"
            )

    @property
    def param_count(self) -> int:
        return self.spec.param_count

    def with_params(self, params) -> "Network":
        return Network(self.spec, np.array(params, dtype=np.float64), dict(self.meta))

    def layers(self, params=None):
        """Return [(W, b), ...] as views into ``params``."""
        return unpack(self.spec, self.params if params is None else params)


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = _as_2d(self.inputs)
        self.targets = _as_2d(self.targets)
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"inputs have {self.inputs.shape[0]} rows but targets have {self.targets.shape[0]}"
            )
        if self.inputs.shape[0] < 1:
            raise ValueError("batch must contain at least one sample")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.targets[idx])


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"expected a 1-D or 2-D array, got shape {a.shape}")
    return a


def unpack(spec: NetworkSpec, params: np.ndarray):
    out = []
    pos = 0
    for fan_in, fan_out in spec.layer_dims:
        W = params[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = params[pos:pos + fan_out]
        pos += fan_out
        out.append((W, b))
    return out


def build_network(spec: NetworkSpec, seed=None, init: str = "glorot") -> Network:
    """Initialize a network deterministically from ``seed``.

    ``glorot``: uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    ``nguyen-widrow``: tanh layers get weight rows of norm 0.7 * fan_out**(1/fan_in)
    and biases spread evenly across that range, so each unit's active region
    covers a different part of a [-1, 1] input; the output layer stays Glorot.
    """
    if init not in INITS:
        raise ValueError(f"unknown init {init!r}; choose from {INITS}")
    rng = np.random.default_rng(seed)
    chunks = []
    n_layers = len(spec.layer_dims)
    for k, (fan_in, fan_out) in enumerate(spec.layer_dims):
        hidden_tanh = k < n_layers - 1 and spec.hidden_activation == "tanh"
        if init == "nguyen-widrow" and hidden_tanh:
            beta = 0.7 * fan_out ** (1.0 / fan_in)
            W = rng.uniform(-1.0, 1.0, size=(fan_out, fan_in))
            W *= beta / np.linalg.norm(W, axis=1, keepdims=True)
            b = beta * np.linspace(-1.0, 1.0, fan_out) * np.sign(W[:, 0])
            if fan_out == 1:
                b = np.zeros(1)
            chunks += [W.ravel(), b]
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
    return Network(spec, np.concatenate(chunks))


def _check_inputs(net: Network, inputs) -> np.ndarray:
    x = _as_2d(inputs)
    if x.shape[1] != net.spec.input_dim:
        raise ValueError(f"input has {x.shape[1]} columns, network expects {net.spec.input_dim}")
    return x


def _activate(spec: NetworkSpec, z):
    return np.tanh(z) if spec.hidden_activation == "tanh" else z


def _activations(net: Network, x: np.ndarray, params=None):
    """Forward pass keeping every layer's output; the last entry is the prediction."""
    layers = net.layers(params)
    hs = [x]
    h = x
    for k, (W, b) in enumerate(layers):
        z = h @ W.T + b
        h = z if k == len(layers) - 1 else _activate(net.spec, z)
        hs.append(h)
    return hs


def forward(net: Network, inputs, params=None) -> np.ndarray:
    """Evaluate the network on an ``N x input_dim`` matrix."""
    x = _check_inputs(net, inputs)
    return _activations(net, x, params)[-1]


def _hidden_deriv(spec: NetworkSpec, h):
    if spec.hidden_activation == "tanh":
        return 1.0 - h * h
    return np.ones_like(h)


def jacobian(net: Network, inputs, params=None) -> np.ndarray:
    """Exact derivatives of every scalar output with respect to every parameter.

    Returns a ``(N * output_dim) x param_count`` matrix whose rows are ordered
    sample-major: row ``n * output_dim + o`` holds d yhat[n, o] / d theta.
    """
    x = _check_inputs(net, inputs)
    hs = _activations(net, x, params)
    layers = net.layers(params)
    n, n_out = x.shape[0], net.spec.output_dim

    J = np.empty((n, n_out, net.param_count))
    # delta[n, o, i] = d yhat[n, o] / d z_k[n, i] for the current layer k
    delta = np.broadcast_to(np.eye(n_out), (n, n_out, n_out))
    pos = net.param_count
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        fan_out, fan_in = W.shape
        h_prev = hs[k]
        pos -= fan_out
        J[:, :, pos:pos + fan_out] = delta
        pos -= fan_out * fan_in
        J[:, :, pos:pos + fan_out * fan_in] = (
            delta[:, :, :, None] * h_prev[:, None, None, :]
        ).reshape(n, n_out, fan_out * fan_in)
        if k > 0:
            delta = (delta @ W) * _hidden_deriv(net.spec, h_prev)[:, None, :]
    return J.reshape(n * n_out, net.param_count)


def finite_diff_jacobian(net: Network, inputs, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with step ``h * (1 + |theta_j|)``; test oracle only."""
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    x = _check_inputs(net, inputs)
    theta = net.params
    J = np.empty((x.shape[0] * net.spec.output_dim, net.param_count))
    for j in range(net.param_count):
        step = h * (1.0 + abs(theta[j]))
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += step
        tm[j] -= step
        diff = forward(net, x, tp) - forward(net, x, tm)
        J[:, j] = diff.ravel() / (tp[j] - tm[j])
    return J


def _backprop(net: Network, hs, dloss_dout: np.ndarray, params=None) -> np.ndarray:
    """Gradient of sum(dloss_dout * yhat) with respect to the flat parameters."""
    layers = net.layers(params)
    grad = np.empty(net.param_count)
    delta = dloss_dout
    pos = net.param_count
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        fan_out, fan_in = W.shape
        h_prev = hs[k]
        pos -= fan_out
        grad[pos:pos + fan_out] = delta.sum(axis=0)
        pos -= fan_out * fan_in
        grad[pos:pos + fan_out * fan_in] = (delta.T @ h_prev).ravel()
        if k > 0:
            delta = (delta @ W) * _hidden_deriv(net.spec, h_prev)
    return grad


def loss_value(pred: np.ndarray, targets: np.ndarray, loss: str = "mse") -> float:
    r = targets - pred
    if loss == "mse":
        return float(np.mean(r * r))
    if loss == "mae":
        return float(np.mean(np.abs(r)))
    raise ValueError(f"unknown loss {loss!r}")


def loss_and_gradient(net: Network, batch: Batch, loss: str = "mse", params=None):
    x = _check_inputs(net, batch.inputs)
    if batch.targets.shape[1] != net.spec.output_dim:
        raise ValueError(
            f"targets have {batch.targets.shape[1]} columns, network outputs {net.spec.output_dim}"
        )
    hs = _activations(net, x, params)
    r = batch.targets - hs[-1]
    count = r.size
    if loss == "mse":
        value = float(np.mean(r * r))
        dout = -2.0 * r / count
    elif loss == "mae":
        value = float(np.mean(np.abs(r)))
        dout = -np.sign(r) / count
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return value, _backprop(net, hs, dout, params)


def loss_gradient(net: Network, batch: Batch, loss: str = "mse", params=None) -> np.ndarray:
    """Gradient of the mean loss over all batch entries.

    For ``mae`` the subgradient uses sign(residual), with sign(0) = 0. The mean
    runs over ``N * output_dim`` entries, which is ``N`` for scalar outputs.
    """
    return loss_and_gradient(net, batch, loss, params)[1]


def model_to_dict(net: Network) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "spec": net.spec.to_dict(),
        "params": [float(p) for p in net.params],
        "meta": net.meta,
    }


def model_from_dict(doc: dict) -> Network:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a model document (format={doc.get('format')!r})")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    return Network(NetworkSpec.from_dict(doc["spec"]), doc["params"], doc.get("meta", {}))


def save_model(net: Network, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(model_to_dict(net), indent=1))


def load_model(path) -> Network:
    return model_from_dict(json.loads(Path(path).read_text()))
