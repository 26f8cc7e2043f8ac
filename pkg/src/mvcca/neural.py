"""Feedforward multilayer perceptrons with exact reverse-mode gradients.

Networks are plain dataclasses over numpy arrays, treated as immutable:
training steps build a new network from updated parameters instead of
mutating in place. Data follows the (features, samples) layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadSpecError, NonFiniteError, ShapeMismatchError, StaleCacheError

ACTIVATIONS = ("sigmoid", "tanh", "relu", "linear")


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "linear":
        return z
    raise BadSpecError(f"unknown activation {name!r}")


def _activation_grad(name: str, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "tanh":
        return 1.0 - out * out
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "linear":
        return np.ones_like(z)
    raise BadSpecError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (fan_out, fan_in)
    bias: np.ndarray    # (fan_out,)
    activation: str


@dataclass(frozen=True)
class MlpNetwork:
    layers: tuple[Layer, ...]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list: (w0, b0, w1, b1, ...)."""
        flat = []
        for layer in self.layers:
            flat.append(layer.weight)
            flat.append(layer.bias)
        return flat

    def with_parameters(self, flat: list[np.ndarray]) -> "MlpNetwork":
        if len(flat) != 2 * len(self.layers):
            raise ShapeMismatchError("parameter list length mismatch")
        layers = tuple(
            Layer(weight=flat[2 * i], bias=flat[2 * i + 1], activation=l.activation)
            for i, l in enumerate(self.layers)
        )
        return MlpNetwork(layers)


@dataclass
class ForwardCache:
    net: MlpNetwork
    x: np.ndarray
    pre_activations: list[np.ndarray]
    outputs: list[np.ndarray]  # outputs[0] is the input


@dataclass
class GradientBundle:
    """Per-layer weight and bias gradients, shapes mirroring the network.

    ``input_grad`` carries the gradient with respect to the network input
    so stacked networks (decoder behind encoder) can chain.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_grad: np.ndarray | None = None

    def flat(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_network(dims, activations, seed) -> MlpNetwork:
    """Build a network with Glorot-uniform weights and zero biases.

    ``dims`` is (input, hidden..., output); ``activations`` names one
    activation per layer. Deterministic given the seed.
    """
    dims = list(dims)
    activations = list(activations)
    if len(dims) < 2:
        raise BadSpecError("need at least an input and an output dimension")
    if len(activations) != len(dims) - 1:
        raise BadSpecError(
            f"{len(dims) - 1} layers but {len(activations)} activations"
        )
    if any(d < 1 for d in dims):
        raise BadSpecError("all layer dimensions must be >= 1")
    for act in activations:
        if act not in ACTIVATIONS:
            raise BadSpecError(f"unknown activation {act!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(weight=w, bias=np.zeros(fan_out), activation=act))
    return MlpNetwork(tuple(layers))


def forward(net: MlpNetwork, x) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network on columns of x, keeping what backward needs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != net.input_dim:
        raise ShapeMismatchError(
            f"input has {x.shape[0]} rows, network expects {net.input_dim}"
        )
    outputs = [x]
    pre = []
    h = x
    for layer in net.layers:
        z = layer.weight @ h + layer.bias[:, None]
        h = _apply_activation(layer.activation, z)
        pre.append(z)
        outputs.append(h)
    if not np.all(np.isfinite(h)):
        raise NonFiniteError("network output contains non-finite values")
    return h, ForwardCache(net=net, x=x, pre_activations=pre, outputs=outputs)


def backward(
    net: MlpNetwork,
    cache: ForwardCache,
    output_grad,
    weight_decay: float = 0.0,
) -> GradientBundle:
    """Gradients of <output_grad, output> plus weight_decay * W per layer."""
    if cache.net is not net:
        raise StaleCacheError("cache was produced by a different network")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape != cache.outputs[-1].shape:
        raise ShapeMismatchError(
            f"output_grad shape {g.shape} != output shape {cache.outputs[-1].shape}"
        )
    n_layers = len(net.layers)
    weights = [None] * n_layers
    biases = [None] * n_layers
    delta = g
    for i in range(n_layers - 1, -1, -1):
        layer = net.layers[i]
        delta = delta * _activation_grad(
            layer.activation, cache.pre_activations[i], cache.outputs[i + 1]
        )
        weights[i] = delta @ cache.outputs[i].T + weight_decay * layer.weight
        biases[i] = delta.sum(axis=1)
        delta = layer.weight.T @ delta
    return GradientBundle(weights=weights, biases=biases, input_grad=delta)
