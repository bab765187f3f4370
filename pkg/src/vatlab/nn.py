"""Multilayer perceptron with hand-derived forward/backward passes.

The network is a stack of affine layers with ReLU hidden activations and an
identity output layer; softmax is applied by the loss / divergence code, not
here. Backward produces exact gradients with respect to both the parameters
and the input, which the perturbation search needs.

Module-level counters track forward/backward calls so the regularizer's
propagation cost can be audited.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError, FormatError, UsageError
from .numerics import Tensor, as_tensor, check_finite, log_softmax, softmax

_CHECKPOINT_VERSION = 1

_counts = {"forward": 0, "backward": 0}


def reset_propagation_counts() -> None:
    _counts["forward"] = 0
    _counts["backward"] = 0


def propagation_counts() -> tuple[int, int]:
    """(forward calls, backward calls) since the last reset."""
    return _counts["forward"], _counts["backward"]


@dataclass
class Layer:
    weights: Tensor  # (fan_in, fan_out)
    biases: Tensor   # (fan_out,)
    activation: str  # "relu" or "identity"

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass
class MlpNetwork:
    layers: list[Layer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weights.shape[1] != nxt.weights.shape[0]:
                raise DimensionError("consecutive layer dimensions do not chain")
        if self.layers and self.layers[-1].activation != "identity":
            raise ConfigError("output layer must use the identity activation")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def output_classes(self) -> int:
        return self.layers[-1].weights.shape[1]

    def parameters(self) -> list[Tensor]:
        """Flat list of parameter arrays (views, not copies)."""
        params = []
        for layer in self.layers:
            params.append(layer.weights)
            params.append(layer.biases)
        return params

    def copy(self) -> "MlpNetwork":
        return MlpNetwork([
            Layer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers
        ])


@dataclass
class ForwardCache:
    net_id: int
    x: Tensor
    pre_activations: list[Tensor]
    activations: list[Tensor]  # post-activation outputs per layer


@dataclass
class GradientBundle:
    d_weights: list[Tensor]
    d_biases: list[Tensor]
    d_input: Tensor

    def parameter_grads(self) -> list[Tensor]:
        grads = []
        for dw, db in zip(self.d_weights, self.d_biases):
            grads.append(dw)
            grads.append(db)
        return grads

    def add_scaled(self, other: "GradientBundle", scale: float) -> None:
        for a, b in zip(self.d_weights, other.d_weights):
            a += scale * b
        for a, b in zip(self.d_biases, other.d_biases):
            a += scale * b
        if (self.d_input is not None and other.d_input is not None
                and self.d_input.shape == other.d_input.shape):
            self.d_input += scale * other.d_input
        else:
            # gradients came from different input batches; the combined
            # input gradient has no single well-defined shape
            self.d_input = None


def zero_gradients(net: MlpNetwork, batch: int) -> GradientBundle:
    return GradientBundle(
        d_weights=[np.zeros_like(l.weights) for l in net.layers],
        d_biases=[np.zeros_like(l.biases) for l in net.layers],
        d_input=np.zeros((batch, net.input_dim)),
    )


def init_mlp(layer_sizes: list[int], rng: np.random.Generator) -> MlpNetwork:
    """He-scaled Gaussian weights (std sqrt(2/fan_in)), zero biases.

    layer_sizes is [input_dim, hidden..., n_classes]; hidden layers get ReLU.
    """
    if len(layer_sizes) < 2:
        raise ConfigError("need at least input and output sizes")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
        w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        b = np.zeros(fan_out)
        act = "identity" if i == len(layer_sizes) - 2 else "relu"
        layers.append(Layer(w, b, act))
    return MlpNetwork(layers)


def forward(net: MlpNetwork, x: Tensor) -> tuple[Tensor, ForwardCache]:
    """Logits for a (batch, input_dim) tensor plus the cache backward needs."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionError(f"input shape {x.shape} does not match input_dim {net.input_dim}")
    _counts["forward"] += 1
    pre, post = [], []
    h = x
    for layer in net.layers:
        z = h @ layer.weights + layer.biases
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        post.append(h)
    check_finite(h, "logits")
    return h, ForwardCache(net_id=id(net), x=x, pre_activations=pre, activations=post)


def backward(net: MlpNetwork, cache: ForwardCache, d_logits: Tensor) -> GradientBundle:
    """Exact gradients of the scalar whose logit-gradient is d_logits."""
    if cache.net_id != id(net) or len(cache.pre_activations) != len(net.layers):
        raise UsageError("cache does not belong to this network")
    d_logits = as_tensor(d_logits)
    if d_logits.shape != cache.pre_activations[-1].shape:
        raise DimensionError("d_logits shape does not match the forward logits")
    _counts["backward"] += 1
    d_weights = [None] * len(net.layers)
    d_biases = [None] * len(net.layers)
    delta = d_logits
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == "relu":
            delta = delta * (cache.pre_activations[i] > 0)
        below = cache.x if i == 0 else cache.activations[i - 1]
        d_weights[i] = below.T @ delta
        d_biases[i] = delta.sum(axis=0)
        delta = delta @ layer.weights.T
    return GradientBundle(d_weights=d_weights, d_biases=d_biases, d_input=delta)


def nll_loss(logits: Tensor, labels: np.ndarray) -> tuple[float, Tensor]:
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise DataError("label out of range")
    log_p = log_softmax(logits)
    loss = -log_p[np.arange(n), labels].mean()
    d_logits = np.exp(log_p)
    d_logits[np.arange(n), labels] -= 1.0
    return float(loss), d_logits / n


def predict_proba(net: MlpNetwork, x: Tensor) -> Tensor:
    return softmax(forward(net, x)[0])


def apply_dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted input dropout: keep with probability p, rescale survivors by 1/p."""
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"keep probability must be in (0, 1], got {p}")
    x = as_tensor(x)
    if p == 1.0:
        return x
    mask = rng.random(x.shape) < p
    return x * mask / p


def save_checkpoint(net: MlpNetwork, path) -> None:
    arrays = {"version": np.array([_CHECKPOINT_VERSION])}
    acts = []
    for i, layer in enumerate(net.layers):
        arrays[f"w{i}"] = layer.weights
        arrays[f"b{i}"] = layer.biases
        acts.append(layer.activation)
    arrays["activations"] = np.array(acts)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> MlpNetwork:
    try:
        with np.load(path, allow_pickle=False) as data:
            if int(data["version"][0]) != _CHECKPOINT_VERSION:
                raise FormatError(f"unsupported checkpoint version in {path}")
            acts = [str(a) for a in data["activations"]]
            layers = [
                Layer(data[f"w{i}"].astype(np.float64), data[f"b{i}"].astype(np.float64), act)
                for i, act in enumerate(acts)
            ]
    except (KeyError, OSError, ValueError) as exc:
        raise FormatError(f"bad checkpoint file {path}: {exc}") from exc
    return MlpNetwork(layers)
