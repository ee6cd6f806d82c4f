"""Feed-forward MLPs on the autodiff tape, momentum SGD, and elementary
vector transforms (softmax, min-max rescale) used throughout the pipeline.

Production dtype is float32; all public operations keep outputs finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ComputationTape, Node
from .errors import DegenerateInputError, DimensionError, OptimizationError

RELU = "relu"
IDENTITY = "identity"


@dataclass
class MlpParams:
    """Weights of a feed-forward net: layer i maps layer_sizes[i] -> layer_sizes[i+1]."""

    layer_sizes: list[int]
    weights: list[np.ndarray] = field(repr=False)   # (in, out)
    biases: list[np.ndarray] = field(repr=False)    # (1, out)
    activations: list[str] = None                   # one tag per layer

    def __post_init__(self):
        n = len(self.layer_sizes) - 1
        if self.activations is None:
            self.activations = [RELU] * (n - 1) + [IDENTITY]
        if not (len(self.weights) == len(self.biases) == len(self.activations) == n):
            raise DimensionError("layer count mismatch between sizes, weights, biases")
        for i in range(n):
            expect = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if self.weights[i].shape != expect:
                raise DimensionError(
                    f"layer {i}: weight shape {self.weights[i].shape}, expected {expect}")
            if self.biases[i].shape != (1, self.layer_sizes[i + 1]):
                raise DimensionError(f"layer {i}: bias shape {self.biases[i].shape}")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list, weights and biases interleaved per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )

    def parameter_count(self) -> int:
        return sum(a.size for a in self.arrays())


def init_mlp(layer_sizes, rng: np.random.Generator, activations=None,
             dtype=np.float32) -> MlpParams:
    """He-normal weights; small positive biases on ReLU layers so no unit
    starts exactly on the kink (dead rows would otherwise pin downstream
    preactivations at 0 through the zero biases)."""
    n = len(layer_sizes) - 1
    if activations is None:
        activations = [RELU] * (n - 1) + [IDENTITY]
    weights, biases = [], []
    for (fan_in, fan_out), act in zip(zip(layer_sizes[:-1], layer_sizes[1:]),
                                      activations):
        std = np.sqrt(2.0 / fan_in)
        weights.append((rng.standard_normal((fan_in, fan_out)) * std).astype(dtype))
        fill = 0.01 if act == RELU else 0.0
        biases.append(np.full((1, fan_out), fill, dtype=dtype))
    return MlpParams(list(layer_sizes), weights, biases, list(activations))


def _apply_activation(x: np.ndarray, tag: str) -> np.ndarray:
    if tag == RELU:
        return np.maximum(x, 0)
    if tag == IDENTITY:
        return x
    raise ValueError(f"unknown activation {tag!r}")


def forward(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """Plain forward pass (no tape)."""
    x = np.asarray(inputs)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise DimensionError(
            f"input has shape {x.shape}, net expects (*, {params.in_dim})")
    for w, b, act in zip(params.weights, params.biases, params.activations):
        x = _apply_activation(x @ w + b, act)
    return x


class MlpTapeHandle:
    """Parameter leaves of one MLP registered on a tape; supports repeated
    forwards whose adjoints accumulate into the same leaves."""

    def __init__(self, tape: ComputationTape, params: MlpParams):
        self.tape = tape
        self.params = params
        self.w_nodes = [tape.leaf(w, "weight") for w in params.weights]
        self.b_nodes = [tape.leaf(b, "bias") for b in params.biases]

    def forward(self, x: Node) -> Node:
        t = self.tape
        if x.value.shape[1] != self.params.in_dim:
            raise DimensionError(
                f"input has shape {x.value.shape}, net expects (*, {self.params.in_dim})")
        for w, b, act in zip(self.w_nodes, self.b_nodes, self.params.activations):
            x = t.add(t.matmul(x, w), b)
            if act == RELU:
                x = t.relu(x)
        return x

    def param_nodes(self) -> list[Node]:
        out = []
        for w, b in zip(self.w_nodes, self.b_nodes):
            out.append(w)
            out.append(b)
        return out

    def gradients(self, adjoints: dict[int, np.ndarray]) -> list[np.ndarray]:
        return [self.tape.grad(adjoints, n) for n in self.param_nodes()]


def sgd_step(arrays: list[np.ndarray], grads: list[np.ndarray],
             velocities: list[np.ndarray], lr: float, momentum: float) -> None:
    """In-place momentum-SGD update: v = momentum*v + g; w -= lr*v."""
    if not lr > 0:
        raise OptimizationError(f"learning rate must be positive, got {lr}")
    if not 0 <= momentum < 1:
        raise OptimizationError(f"momentum must be in [0, 1), got {momentum}")
    for i, (w, g, v) in enumerate(zip(arrays, grads, velocities)):
        if not np.all(np.isfinite(g)):
            raise OptimizationError(f"non-finite gradient at parameter {i}", layer_index=i)
        v *= momentum
        v += g.astype(v.dtype)
        w -= (lr * v).astype(w.dtype)


class SgdMomentum:
    """Momentum SGD with the step-decay schedule lr0 / factor**(epoch // every)."""

    def __init__(self, arrays: list[np.ndarray], lr: float = 0.01, momentum: float = 0.9,
                 decay_every: int = 8, decay_factor: float = 10.0):
        self.arrays = arrays
        self.lr0 = lr
        self.momentum = momentum
        self.decay_every = decay_every
        self.decay_factor = decay_factor
        self.epoch = 0
        self.velocities = [np.zeros_like(a) for a in arrays]

    @property
    def current_lr(self) -> float:
        if not self.decay_every:
            return self.lr0
        return self.lr0 / self.decay_factor ** (self.epoch // self.decay_every)

    def step(self, grads: list[np.ndarray]) -> None:
        sgd_step(self.arrays, grads, self.velocities, self.current_lr, self.momentum)

    def advance_epoch(self) -> None:
        self.epoch += 1


def flatten_params(params: MlpParams) -> np.ndarray:
    """Little-endian f32 serialization of all weights and biases in layer order."""
    return np.concatenate([a.reshape(-1) for a in params.arrays()]).astype("<f4")


def unflatten_params(flat: np.ndarray, layer_sizes, activations) -> MlpParams:
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        biases.append(flat[pos:pos + fan_out].reshape(1, fan_out).copy())
        pos += fan_out
    if pos != flat.size:
        raise DimensionError("flat parameter payload does not match layer sizes")
    return MlpParams(list(layer_sizes), weights, biases, list(activations))


def minmax_rescale(v: np.ndarray) -> np.ndarray:
    """Map min -> 0 and max -> 1, linear in between. Constant input is an error."""
    v = np.asarray(v, dtype=np.float32).reshape(-1)
    if v.size < 2:
        raise DegenerateInputError("min-max rescale needs at least 2 entries")
    lo, hi = v.min(), v.max()
    if hi <= lo:
        raise DegenerateInputError("constant vector has no min-max rescale")
    return (v - lo) / (hi - lo)


def rescale_rows_margin(logits: np.ndarray) -> np.ndarray:
    """Per row: rescaled top1 minus rescaled top2, i.e. (max - second) / (max - min).

    Degenerate (constant) rows get margin 0: they are maximally ambiguous.
    Used for batched boundary tests on rasters; the strict single-vector
    contract lives in `minmax_rescale`.
    """
    z = np.asarray(logits, dtype=np.float64)
    part = np.partition(z, z.shape[1] - 2, axis=1)
    top1 = part[:, -1]
    top2 = part[:, -2]
    lo = z.min(axis=1)
    span = top1 - lo
    margin = np.zeros(z.shape[0])
    ok = span > 0
    margin[ok] = (top1[ok] - top2[ok]) / span[ok]
    return margin


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stabilized softmax; also accepts a single vector."""
    z = np.asarray(logits, dtype=np.float32)
    single = z.ndim == 1
    if single:
        z = z.reshape(1, -1)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return out[0] if single else out
