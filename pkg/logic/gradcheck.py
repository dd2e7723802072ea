"""
Finite-difference verification of the hand-written backward passes.

grad_check scalarises a layer's output with a fixed random projection R,
f(x) = sum(layer(x) * R), and compares the analytic gradients of f (input
and every parameter) with central differences. run_suite applies it to each
differentiable operator over a range of seeds.
"""
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from exceptions import InvalidArgumentError
from .crnn_model import ModelConfig, build
from .layers import (Activation, BatchNorm, ContextWindow, Conv2D, Dense, MaxPoolFreq,
                     Module, TimeMean)
from .losses import bce_loss, combined_loss
from .recurrent import BiGRU
from .tensor import TRAIN

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
FAULT_SCALE = 1.1


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic), initial=0.0)),
                float(np.max(np.abs(numeric), initial=0.0)), 1e-12)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def _numeric_gradient(f: Callable[[], float], array: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        original = array[idx]
        array[idx] = original + step
        f_plus = f()
        array[idx] = original - step
        f_minus = f()
        array[idx] = original
        grad[idx] = (f_plus - f_minus) / (2.0 * step)
    return grad


def grad_check(layer: Module, x: np.ndarray, seed: int = 0, mode: str = TRAIN,
               step: float = FD_STEP) -> float:
    """
    Returns the largest relative gradient error over the input and all
    parameters of `layer` at input `x`.

    The error of one gradient array is max|a - n| / max(max|a|, max|n|, 1e-12).
    Layers must be deterministic in `mode` (no active dropout).
    """
    x = np.array(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal(layer.forward(x.copy(), mode).shape)

    def objective() -> float:
        return float(np.sum(layer.forward(x, mode) * projection))

    layer.zero_grad()
    layer.forward(x, mode)
    analytic_input = layer.backward(projection)
    analytic_params = {name: t.grad.copy() for name, t in layer.parameters().items()}
    layer.zero_grad()

    errors = {'input': _relative_error(analytic_input, _numeric_gradient(objective, x, step))}
    for name, tensor in layer.parameters().items():
        numeric = _numeric_gradient(objective, tensor.values, step)
        errors[name] = _relative_error(analytic_params[name], numeric)
    worst = max(errors, key=errors.get)
    logger.debug("grad_check %s: worst %s error %.3e", type(layer).__name__, worst, errors[worst])
    return errors[worst]


class FaultyBackward(Module):
    """
    Wraps a layer so its backward pass is wrong by 10%: the first parameter
    gradient (by name) is scaled by 1.1, or the input gradient when the layer
    has no parameters.
    """
    def __init__(self, inner: Module):
        self.inner = inner

    def forward(self, x, mode=TRAIN):
        return self.inner.forward(x, mode)

    def backward(self, grad_out):
        params = self.inner.parameters()
        before = {name: t.grad.copy() for name, t in params.items()}
        grad_in = self.inner.backward(grad_out)
        if not params:
            return grad_in * FAULT_SCALE
        name = sorted(params)[0]
        contribution = params[name].grad - before[name]
        params[name].grad += (FAULT_SCALE - 1.0) * contribution
        return grad_in

    def parameters(self):
        return self.inner.parameters()


class BCEHarness(Module):
    """bce_loss against fixed targets, as a layer with a length-1 output."""
    def __init__(self, target: np.ndarray):
        self.target = target
        self._grad = None

    def forward(self, x, mode=TRAIN):
        loss, self._grad = bce_loss(x, self.target)
        return np.array([loss])

    def backward(self, grad_out):
        return self._grad * grad_out[0]


class CombinedLossHarness(Module):
    """
    combined_loss with the input packed as T + 1 rows: the first T rows are
    the strong predictions, the last row the weak prediction.
    """
    def __init__(self, strong_target: np.ndarray, weak_target: np.ndarray,
                 strong_weight: float, weak_weight: float):
        self.strong_target = strong_target
        self.weak_target = weak_target
        self.weights = (strong_weight, weak_weight)
        self._result = None

    def forward(self, x, mode=TRAIN):
        self._result = combined_loss(x[:-1], self.strong_target, x[-1], self.weak_target,
                                     *self.weights)
        return np.array([self._result.total])

    def backward(self, grad_out):
        grad = np.concatenate([self._result.grad_strong, self._result.grad_weak[None, :]])
        return grad * grad_out[0]


class ModelHarness(Module):
    """A whole detector seen as one layer whose output is [strong..., weak...]."""
    def __init__(self, model):
        self.model = model
        self._split = None

    def forward(self, x, mode=TRAIN):
        strong, weak = self.model.forward_batch(x, mode)
        self._split = (strong.shape, strong.size)
        return np.concatenate([strong.ravel(), weak.ravel()])

    def backward(self, grad_out):
        shape, size = self._split
        batch = shape[0]
        return self.model.backward(grad_out[:size].reshape(shape),
                                   grad_out[size:].reshape(batch, -1))

    def parameters(self):
        return self.model.parameters()


def _tiny_crnn(rng: np.random.Generator) -> tuple[Module, np.ndarray]:
    cfg = ModelConfig(num_classes=3, input_bands=4, conv_filters=[2, 3], freq_pools=[2, 2],
                      gru_units=2, strong_head_dense=[3, 3], weak_head_dense=[2, 3],
                      dropout_rate=0.0, seed=int(rng.integers(2 ** 31)))
    return ModelHarness(build(cfg)), rng.standard_normal((2, 4, 4))


def _tiny_baseline(rng: np.random.Generator) -> tuple[Module, np.ndarray]:
    cfg = ModelConfig(architecture='baseline', num_classes=2, input_bands=3, context_frames=3,
                      baseline_hidden=[4, 4], dropout_rate=0.0, seed=int(rng.integers(2 ** 31)))
    # TimeMax in the weak path needs distinct per-frame values; random inputs give them.
    return ModelHarness(build(cfg)), rng.standard_normal((2, 5, 3))


# name -> factory(rng) returning (layer, input). Dropout is excluded: its
# output is random in train mode and the identity in infer mode.
OPERATORS: dict[str, Callable[[np.random.Generator], tuple[Module, np.ndarray]]] = {
    'conv2d': lambda rng: (Conv2D(2, 3, rng), rng.standard_normal((2, 4, 4, 2))),
    'maxpool_freq': lambda rng: (MaxPoolFreq(2), rng.standard_normal((2, 3, 4, 2))),
    'batch_norm': lambda rng: (BatchNorm(3), rng.standard_normal((2, 3, 4, 3))),
    'dense': lambda rng: (Dense(4, 3, rng, 'tanh'), rng.standard_normal((2, 5, 4))),
    'dense_linear': lambda rng: (Dense(4, 3, rng, 'linear'), rng.standard_normal((2, 5, 4))),
    'bigru': lambda rng: (BiGRU(3, 4, rng), rng.standard_normal((2, 5, 3))),
    'sigmoid': lambda rng: (Activation('sigmoid'), rng.standard_normal((3, 4))),
    'tanh': lambda rng: (Activation('tanh'), rng.standard_normal((3, 4))),
    'relu': lambda rng: (Activation('relu'), rng.standard_normal((3, 4))),
    'time_mean': lambda rng: (TimeMean(), rng.standard_normal((2, 5, 3))),
    'context_window': lambda rng: (ContextWindow(3), rng.standard_normal((2, 4, 3))),
    'bce_loss': lambda rng: (BCEHarness(rng.integers(0, 2, (4, 3)).astype(float)),
                             rng.uniform(0.05, 0.95, (4, 3))),
    'combined_loss': lambda rng: (
        CombinedLossHarness(rng.integers(0, 2, (5, 3)).astype(float),
                          rng.integers(0, 2, 3).astype(float),
                          strong_weight=float(rng.choice([0.002, 0.2, 1.0])),
                          weak_weight=float(rng.choice([0.02, 1.0]))),
        rng.uniform(0.05, 0.95, (6, 3))),
    'crnn': _tiny_crnn,
    'baseline': _tiny_baseline,
}


@dataclass
class GradCheckResult:
    operator: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def check_operator(name: str, seed: int = 0, seeds: int = 20, inject_fault: bool = False,
                   tolerance: float = DEFAULT_TOLERANCE) -> GradCheckResult:
    """Runs grad_check for one operator over `seeds` consecutive seeds and keeps the worst error."""
    if name not in OPERATORS:
        raise InvalidArgumentError(f"Unknown operator '{name}'; expected one of {sorted(OPERATORS)}.")
    worst = 0.0
    for offset in range(seeds):
        rng = np.random.default_rng(seed + offset)
        layer, x = OPERATORS[name](rng)
        if inject_fault:
            layer = FaultyBackward(layer)
        worst = max(worst, grad_check(layer, x, seed=seed + offset))
    return GradCheckResult(operator=name, max_error=worst, tolerance=tolerance)


def run_suite(seed: int = 0, seeds: int = 20, inject_fault: str | None = None,
              tolerance: float = DEFAULT_TOLERANCE,
              operators: list[str] | None = None) -> list[GradCheckResult]:
    """
    Checks every operator (or the given subset). `inject_fault` names one
    operator whose backward pass is deliberately corrupted.
    """
    names = operators or list(OPERATORS)
    if inject_fault is not None and inject_fault not in OPERATORS:
        raise InvalidArgumentError(
            f"Unknown operator '{inject_fault}' for fault injection; expected one of {sorted(OPERATORS)}.")
    results = []
    for name in names:
        result = check_operator(name, seed=seed, seeds=seeds,
                                inject_fault=(name == inject_fault), tolerance=tolerance)
        logger.info("grad_check %-15s max error %.3e  %s", name, result.max_error,
                    "ok" if result.passed else "FAILED")
        results.append(result)
    return results
