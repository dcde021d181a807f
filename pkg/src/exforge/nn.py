"""Dense feed-forward networks with exact backpropagation.

A :class:`Network` plays every role in the attack: the victim and the
student are classifiers whose forward pass returns logits, and the
generator is a network whose final layer carries a ``tanh`` activation.
:meth:`Network.forward` always returns the *pre-activation* of the final
layer (logits, or pre-tanh images); :meth:`Network.activate_output`
applies the final activation when the squashed value is needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import jsonio
from .exceptions import ConfigurationError, ShapeError, ValidationError
from .rng import make_rng
from .validation import P_MIN, check_matrix, check_probabilities, check_vector

ACTIVATIONS = ("identity", "relu", "tanh")
CHECKPOINT_VERSION = 1


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        # subgradient at 0 is 0
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return np.ones_like(z)


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size

    @classmethod
    def glorot(cls, n_in: int, n_out: int, activation: str, rng) -> "DenseLayer":
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        return cls(w, np.zeros(n_out), activation)


class ForwardCache(NamedTuple):
    owner: int
    version: int
    inputs: list  # input to each layer
    preacts: list  # pre-activation of each layer


class Network:
    """Ordered stack of :class:`DenseLayer` objects."""

    def __init__(self, layers: Sequence[DenseLayer]):
        layers = list(layers)
        if not layers:
            raise ConfigurationError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer output {a.n_out} does not feed layer input {b.n_in}")
        self.layers = layers
        self.version = 0

    @classmethod
    def build(cls, sizes: Sequence[int], hidden_activation: str = "relu",
              output_activation: str = "identity", rng=0) -> "Network":
        """Glorot-initialised network with layer widths ``sizes`` (input first)."""
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ConfigurationError(f"invalid layer sizes {sizes}")
        rng = make_rng(rng)
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = output_activation if i == len(sizes) - 2 else hidden_activation
            layers.append(DenseLayer.glorot(int(n_in), int(n_out), act, rng))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out

    @property
    def output_activation(self) -> str:
        return self.layers[-1].activation

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def touch(self) -> None:
        """Mark parameters as modified, invalidating outstanding caches."""
        self.version += 1

    def copy(self) -> "Network":
        return Network([DenseLayer(l.weights.copy(), l.bias.copy(), l.activation)
                        for l in self.layers])

    def forward(self, x) -> tuple[np.ndarray, ForwardCache]:
        x = check_matrix(x, self.input_dim, "x")
        inputs, preacts = [], []
        a = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            inputs.append(a)
            z = a @ layer.weights.T + layer.bias
            preacts.append(z)
            if i < last:
                a = _activate(z, layer.activation)
        return z, ForwardCache(id(self), self.version, inputs, preacts)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def activate_output(self, z: np.ndarray) -> np.ndarray:
        return _activate(z, self.output_activation)

    def backward(self, cache: ForwardCache, upstream) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(upstream * forward_output)``.

        Returns parameter gradients in :attr:`params` order and the gradient
        with respect to the network input.
        """
        if cache.owner != id(self) or cache.version != self.version:
            raise ValidationError("forward cache is stale or belongs to another network")
        delta = np.asarray(upstream, dtype=np.float64)
        expected = cache.preacts[-1].shape
        if delta.shape != expected:
            raise ShapeError(f"upstream shape {delta.shape} does not match output {expected}")
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            grads[2 * i] = delta.T @ cache.inputs[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ layer.weights
            if i > 0:
                prev = self.layers[i - 1]
                delta = delta * _activation_grad(cache.preacts[i - 1], prev.activation)
        return grads, delta

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "layers": [{"activation": l.activation, "weights": l.weights, "bias": l.bias}
                       for l in self.layers],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {doc.get('version')!r}")
        net = cls([DenseLayer(np.array(l["weights"], dtype=np.float64).reshape(
                                  len(l["bias"]), -1),
                              l["bias"], l["activation"]) for l in doc["layers"]])
        if net.input_dim != doc["input_dim"] or net.output_dim != doc["output_dim"]:
            raise ShapeError("checkpoint dimensions disagree with its layers")
        return net

    def save(self, path) -> None:
        jsonio.dump(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "Network":
        return cls.from_dict(jsonio.load(Path(path)))


def softmax(logits) -> np.ndarray:
    """Row-wise softmax over the last axis, stabilised by max subtraction."""
    v = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValidationError("logits contain non-finite values")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    v = np.asarray(logits, dtype=np.float64)
    shifted = v - v.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_jacobian(probs) -> np.ndarray:
    """``d softmax / d logits`` evaluated at ``probs``: ``diag(p) - p p^T``.

    A ``(B, K)`` batch gives a ``(B, K, K)`` stack.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 2:
        p = check_probabilities(p)
        return p[:, :, None] * np.eye(p.shape[1]) - p[:, :, None] * p[:, None, :]
    p = check_probabilities(check_vector(p, name="probs"))
    return np.diag(p) - np.outer(p, p)


def clip_probs(P) -> np.ndarray:
    return np.maximum(np.asarray(P, dtype=np.float64), P_MIN)


@dataclass
class Optimizer:
    """SGD with momentum or Adam, with a budget-fraction learning-rate schedule.

    ``schedule`` is either a list of ``(fraction, factor)`` milestones, where
    the learning rate is multiplied by ``factor`` once ``fraction`` of
    ``total_steps`` has elapsed, or the string ``"triangular"`` for a single
    cycle rising from a tenth of ``learning_rate`` to its peak at mid-run and
    back down.
    """

    kind: str = "sgd-momentum"
    learning_rate: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    schedule: list | str = field(default_factory=list)
    total_steps: int | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    steps: int = 0
    first_moment: list | None = None
    second_moment: list | None = None

    def __post_init__(self):
        if self.kind not in ("sgd-momentum", "adam"):
            raise ConfigurationError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigurationError("weight decay must be non-negative")
        if isinstance(self.schedule, str) and self.schedule != "triangular":
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")

    def current_lr(self) -> float:
        if not self.schedule or not self.total_steps:
            return self.learning_rate
        frac = self.steps / self.total_steps
        if self.schedule == "triangular":
            return self.learning_rate * (0.1 + 0.9 * max(0.0, 1.0 - abs(2.0 * frac - 1.0)))
        lr = self.learning_rate
        for milestone, factor in self.schedule:
            if frac >= milestone:
                lr *= factor
        return lr

    def step(self, params, grads) -> list[np.ndarray]:
        """Update ``params`` in place (a :class:`Network` or a list of arrays)."""
        net = params if isinstance(params, Network) else None
        arrays = net.params if net is not None else list(params)
        grads = [np.asarray(g, dtype=np.float64) for g in grads]
        if len(grads) != len(arrays) or any(g.shape != p.shape for g, p in zip(grads, arrays)):
            raise ShapeError("gradients do not match parameter shapes")
        if self.first_moment is None:
            self.first_moment = [np.zeros_like(p) for p in arrays]
            self.second_moment = [np.zeros_like(p) for p in arrays]
        elif any(m.shape != p.shape for m, p in zip(self.first_moment, arrays)) \
                or len(self.first_moment) != len(arrays):
            raise ShapeError("optimizer state does not match parameter shapes")

        lr = self.current_lr()
        self.steps += 1
        b1, b2 = self.betas
        for p, g, m, v in zip(arrays, grads, self.first_moment, self.second_moment):
            if self.weight_decay:
                g = g + self.weight_decay * p
            if self.kind == "sgd-momentum":
                if self.momentum:
                    m *= self.momentum
                    m += g
                    g = m
                p -= lr * g
            else:
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                m_hat = m / (1 - b1 ** self.steps)
                v_hat = v / (1 - b2 ** self.steps)
                p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if net is not None:
            net.touch()
        return arrays
