"""A small MLP that maps a feature vector to a Z-bin score histogram.

The output head applies an elementwise sigmoid and then divides by the sum,
so every prediction is a strictly positive histogram.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PredictorConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64,)
    num_bins: int = 10
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError("input_dim must be at least 1")
        if self.num_bins < 2:
            raise ValueError("num_bins must be at least 2")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden layer widths must be positive")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.num_bins]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "num_bins": self.num_bins,
            "activation": self.activation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorConfig":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d["hidden_dims"]),
            num_bins=int(d["num_bins"]),
            activation=d.get("activation", "relu"),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class PredictorParams:
    """Weights ``W[k]`` of shape (fan_in, fan_out) and biases ``b[k]``, one pair per layer."""

    config: PredictorConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "PredictorParams":
        return PredictorParams(
            self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def zeros_like(self) -> "PredictorParams":
        return PredictorParams(
            self.config,
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "PredictorParams":
        vec = np.array(vec, dtype=np.float64)
        if vec.size != self.num_params:
            raise ValueError(f"expected {self.num_params} parameters, got {vec.size}")
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(vec[pos : pos + a.size].reshape(a.shape))
            pos += a.size
        return PredictorParams(self.config, arrays[0::2], arrays[1::2])

    def equals(self, other: "PredictorParams") -> bool:
        """Bit-for-bit equality of config and every array."""
        return (
            self.config == other.config
            and len(self.weights) == len(other.weights)
            and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))
        )


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre_activations: list[np.ndarray] = field(default_factory=list)
    activations: list[np.ndarray] = field(default_factory=list)
    sigmoid: np.ndarray | None = None
    y_hat: np.ndarray | None = None


def init_params(config: PredictorConfig) -> PredictorParams:
    rng = np.random.default_rng(config.seed)
    dims = config.layer_dims
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        # He scaling ahead of a ReLU, plain 1/fan_in ahead of the sigmoid head
        gain = 2.0 if k < len(dims) - 2 else 1.0
        weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return PredictorParams(config, weights, biases)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(params: PredictorParams, features) -> ForwardTrace:
    """Run the network on one feature vector or a (batch, input_dim) array."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1:] != (params.config.input_dim,) or x.ndim > 2:
        raise ValueError(
            f"expected features of length {params.config.input_dim}, got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    trace = ForwardTrace(inputs=x, activations=[x])
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        trace.pre_activations.append(z)
        if k < last:
            h = np.maximum(z, 0.0)
            trace.activations.append(h)
    s = _sigmoid(z)
    trace.sigmoid = s
    trace.y_hat = s / np.sum(s, axis=-1, keepdims=True)
    return trace


def predict(params: PredictorParams, features) -> np.ndarray:
    return forward(params, features).y_hat


def backward(params: PredictorParams, trace: ForwardTrace, loss_grad) -> PredictorParams:
    """Gradients of a scalar loss w.r.t. every weight and bias.

    ``loss_grad`` is d loss / d y_hat with the same shape as ``trace.y_hat``;
    for a batch the per-row contributions are summed.
    """
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.shape != trace.y_hat.shape:
        raise ValueError(f"loss gradient shape {g.shape} != output shape {trace.y_hat.shape}")
    s = trace.sigmoid
    y_hat = trace.y_hat
    total = np.sum(s, axis=-1, keepdims=True)
    # normalization Jacobian: d y_i / d s_j = (delta_ij * S - s_i) / S^2
    d_s = (g - np.sum(g * y_hat, axis=-1, keepdims=True)) / total
    delta = d_s * s * (1.0 - s)

    grads = params.zeros_like()
    for k in range(len(params.weights) - 1, -1, -1):
        a = trace.activations[k]
        if a.ndim == 1:
            grads.weights[k][...] = np.outer(a, delta)
            grads.biases[k][...] = delta
        else:
            grads.weights[k][...] = a.T @ delta
            grads.biases[k][...] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k].T) * (trace.pre_activations[k - 1] > 0.0)
    return grads
