"""Deterministic feedforward networks with exact reverse-mode gradients.

Parameters live in one flat float64 vector. The layout is, layer by layer, the
weight matrix (fan_in x fan_out, row-major) followed by the bias vector, so
that ``z = a @ W + b`` works on row-batched inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DimensionError, NonFiniteError

logger = logging.getLogger(__name__)

ParamVector = np.ndarray
LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]

_MAX_SEED = 2**64 - 1


class Activation(str, Enum):
    ELU = "elu"
    RELU = "relu"
    IDENTITY = "identity"


@dataclass(frozen=True)
class MlpSpec:
    """Widths from input to output; hidden layers use ``activation``, the output is linear."""

    layer_widths: Tuple[int, ...]
    activation: Activation = Activation.ELU
    seed: int = 0

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        if not widths:
            raise ConfigError("empty layer list")
        if len(widths) < 2:
            raise ConfigError(f"need at least input and output widths, got {widths}")
        if any(w <= 0 for w in widths):
            raise ConfigError(f"layer widths must be positive, got {widths}")
        if not 0 <= int(self.seed) <= _MAX_SEED:
            raise ConfigError(f"seed {self.seed} outside unsigned 64-bit range")
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def param_count(self) -> int:
        w = self.layer_widths
        return sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))

    def with_seed(self, seed: int) -> "MlpSpec":
        return MlpSpec(self.layer_widths, self.activation, seed)

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths), "activation": self.activation.value, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "MlpSpec":
        return cls(tuple(data["layer_widths"]), Activation(data["activation"]), int(data["seed"]))


@dataclass(frozen=True)
class GradResult:
    output: np.ndarray
    grad: ParamVector
    input_grad: np.ndarray
    loss: float


@dataclass
class ForwardCache:
    activations: List[np.ndarray]  # layer inputs, activations[0] is the batch itself
    preacts: List[np.ndarray]


def _activate(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.ELU:
        return np.where(z > 0.0, z, np.expm1(np.minimum(z, 0.0)))
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def _activate_grad(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.ELU:
        return np.where(z > 0.0, 1.0, np.exp(np.minimum(z, 0.0)))
    if kind is Activation.RELU:
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def unpack(spec: MlpSpec, params: ParamVector) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Views of ``params`` as (W, b) pairs."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.param_count:
        raise DimensionError(f"expected {spec.param_count} parameters for {spec.layer_widths}, got {params.shape}")
    layers = []
    offset = 0
    w = spec.layer_widths
    for i in range(spec.n_layers):
        n_w = w[i] * w[i + 1]
        W = params[offset:offset + n_w].reshape(w[i], w[i + 1])
        offset += n_w
        b = params[offset:offset + w[i + 1]]
        offset += w[i + 1]
        layers.append((W, b))
    return layers


def init_params(spec: MlpSpec) -> ParamVector:
    """Fan-in scaled uniform weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero biases."""
    rng = np.random.default_rng(spec.seed)
    blocks = []
    w = spec.layer_widths
    for i in range(spec.n_layers):
        limit = np.sqrt(6.0 / w[i])
        blocks.append(rng.uniform(-limit, limit, size=w[i] * w[i + 1]))
        blocks.append(np.zeros(w[i + 1]))
    return np.concatenate(blocks)


def forward_batch(spec: MlpSpec, params: ParamVector, X: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_width:
        raise DimensionError(f"input of shape {X.shape} does not match input width {spec.input_width}")
    layers = unpack(spec, params)
    a = X
    cache = ForwardCache(activations=[X], preacts=[])
    for i, (W, b) in enumerate(layers):
        z = a @ W + b
        cache.preacts.append(z)
        a = z if i == len(layers) - 1 else _activate(spec.activation, z)
        cache.activations.append(a)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("non-finite network output")
    return a, cache


def forward(spec: MlpSpec, params: ParamVector, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"expected a vector input, got shape {x.shape}")
    out, _ = forward_batch(spec, params, x[None, :])
    return out[0]


def backward_batch(
    spec: MlpSpec,
    params: ParamVector,
    cache: ForwardCache,
    d_out: np.ndarray,
    *,
    squared: bool = False,
) -> Tuple[ParamVector, np.ndarray]:
    """Backpropagate row-wise output adjoints.

    Returns the parameter gradient summed over rows and the per-row input
    gradients. With ``squared=True`` the first result is instead the sum over
    rows of the elementwise squared per-row gradients; each row's gradient of
    a weight block is a single outer product, so this is exact.
    """
    layers = unpack(spec, params)
    dz = np.asarray(d_out, dtype=np.float64)
    n = cache.activations[0].shape[0]
    if dz.shape != (n, spec.output_width):
        raise DimensionError(f"output adjoint shape {dz.shape} != {(n, spec.output_width)}")

    blocks: List[np.ndarray] = []
    d_input = dz
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        a_prev = cache.activations[i]
        if squared:
            dW = (a_prev * a_prev).T @ (dz * dz)
            db = (dz * dz).sum(axis=0)
        else:
            dW = a_prev.T @ dz
            db = dz.sum(axis=0)
        blocks.append(db)
        blocks.append(dW.ravel())
        d_input = dz @ W.T
        if i > 0:
            dz = d_input * _activate_grad(spec.activation, cache.preacts[i - 1])

    grad = np.concatenate(blocks[::-1])
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(d_input))):
        raise NonFiniteError("non-finite gradient during backpropagation")
    return grad, d_input


def evaluate_with_gradient(spec: MlpSpec, params: ParamVector, x: np.ndarray, loss: LossFn) -> GradResult:
    """Value and exact gradient of ``loss(forward(x))`` wrt parameters and input.

    ``loss`` maps the output vector to ``(value, d_value/d_output)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != spec.input_width:
        raise DimensionError(f"input length {x.shape} does not match input width {spec.input_width}")
    out, cache = forward_batch(spec, params, x[None, :])
    value, d_out = loss(out[0])
    d_out = np.asarray(d_out, dtype=np.float64).reshape(1, spec.output_width)
    if not np.isfinite(value) or not np.all(np.isfinite(d_out)):
        raise NonFiniteError("non-finite loss value or loss gradient")
    grad, d_input = backward_batch(spec, params, cache, d_out)
    return GradResult(output=out[0], grad=grad, input_grad=d_input[0], loss=float(value))


def squared_error(target: Sequence[float]) -> LossFn:
    """L(o) = ||o - target||^2."""
    target = np.asarray(target, dtype=np.float64)

    def loss(out: np.ndarray) -> Tuple[float, np.ndarray]:
        r = out - target
        return float(r @ r), 2.0 * r

    return loss


# Optimizers


class OptimizerRule(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class OptimizerConfig:
    rule: OptimizerRule = OptimizerRule.ADAM
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        object.__setattr__(self, "rule", OptimizerRule(self.rule))
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("Adam eps must be positive")


@dataclass(frozen=True)
class OptimizerState:
    step: int = 0
    m: Optional[np.ndarray] = field(default=None, repr=False)
    v: Optional[np.ndarray] = field(default=None, repr=False)


def optimizer_step(
    params: ParamVector,
    grad: ParamVector,
    state: OptimizerState,
    config: OptimizerConfig,
) -> Tuple[ParamVector, OptimizerState]:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise DimensionError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient passed to optimizer")

    if config.rule is OptimizerRule.SGD:
        return params - config.lr * grad, OptimizerState(step=state.step + 1)

    m = np.zeros_like(params) if state.m is None else state.m
    v = np.zeros_like(params) if state.v is None else state.v
    step = state.step + 1
    m = config.beta1 * m + (1.0 - config.beta1) * grad
    v = config.beta2 * v + (1.0 - config.beta2) * grad * grad
    m_hat = m / (1.0 - config.beta1**step)
    v_hat = v / (1.0 - config.beta2**step)
    new_params = params - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return new_params, OptimizerState(step=step, m=m, v=v)
