"""
Differentiable layers with hand-written backward passes.

Each layer caches what it needs during forward() and consumes it in
backward(grad_out), which accumulates parameter gradients and returns the
gradient with respect to the layer input. Spatial layers work on
batch x time x frequency x channel arrays.
"""
import logging

import numpy as np

from exceptions import InvalidArgumentError, ShapeError
from .tensor import Tensor, TRAIN, INFER, MODES, glorot_uniform, zeros, ones

logger = logging.getLogger(__name__)


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise InvalidArgumentError(f"Unknown mode '{mode}'; expected one of {MODES}.")
    return mode


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow in exp for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# Derivatives expressed through the activation output y (and input z for relu).
ACTIVATIONS = {
    'linear': (lambda z: z, lambda z, y: np.ones_like(y)),
    'sigmoid': (sigmoid, lambda z, y: y * (1.0 - y)),
    'tanh': (tanh, lambda z, y: 1.0 - y * y),
    'relu': (relu, lambda z, y: (z > 0).astype(y.dtype)),
}


class Module:
    """
    Base class for all layers.

    Subclasses implement forward() and backward(); layers with trainable
    state expose it through parameters(), non-trainable state through
    buffers().
    """
    def forward(self, x: np.ndarray, mode: str = INFER) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def zero_grad(self) -> None:
        for tensor in self.parameters().values():
            tensor.zero_grad()

    def __call__(self, x: np.ndarray, mode: str = INFER) -> np.ndarray:
        return self.forward(x, mode)


class Sequential(Module):
    """Runs named layers in order; parameter names are prefixed with the layer name."""
    def __init__(self, layers: list[tuple[str, Module]]):
        self.layers = list(layers)

    def forward(self, x, mode=INFER):
        for _, layer in self.layers:
            x = layer.forward(x, mode)
        return x

    def backward(self, grad_out):
        for _, layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def parameters(self):
        return {f"{name}.{key}": tensor
                for name, layer in self.layers
                for key, tensor in layer.parameters().items()}

    def buffers(self):
        return {f"{name}.{key}": array
                for name, layer in self.layers
                for key, array in layer.buffers().items()}

    def __getitem__(self, name: str) -> Module:
        for layer_name, layer in self.layers:
            if layer_name == name:
                return layer
        raise KeyError(name)


class Conv2D(Module):
    """
    3x3 convolution with stride 1 and zero 'same' padding.

    Kernels are stored as 3 x 3 x Cin x Cout. The convolution is computed as
    nine shifted matrix products, which keeps memory at the size of the output.
    """
    KERNEL = 3

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 dtype=np.float64):
        k = self.KERNEL
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = glorot_uniform(rng, (k, k, in_channels, out_channels),
                                     fan_in=k * k * in_channels, fan_out=k * k * out_channels,
                                     dtype=dtype)
        self.bias = zeros((out_channels,), dtype=dtype)
        self._padded = None

    def forward(self, x, mode=INFER):
        _check_mode(mode)
        if x.ndim != 4 or x.shape[-1] != self.in_channels:
            raise ShapeError(
                f"Conv2D expects B x T x F x {self.in_channels} input, got {x.shape}.")
        batch, frames, bands, _ = x.shape
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        out = np.empty((batch, frames, bands, self.out_channels), dtype=np.result_type(x, self.kernel.values))
        out[...] = self.bias.values
        for kt in range(self.KERNEL):
            for kf in range(self.KERNEL):
                out += padded[:, kt:kt + frames, kf:kf + bands, :] @ self.kernel.values[kt, kf]
        self._padded = padded
        return out

    def backward(self, grad_out):
        padded = self._padded
        batch, frames, bands, _ = grad_out.shape
        grad_padded = np.zeros_like(padded)
        grad_kernel = np.zeros_like(self.kernel.values)
        for kt in range(self.KERNEL):
            for kf in range(self.KERNEL):
                window = padded[:, kt:kt + frames, kf:kf + bands, :]
                grad_kernel[kt, kf] = np.tensordot(window, grad_out, axes=([0, 1, 2], [0, 1, 2]))
                grad_padded[:, kt:kt + frames, kf:kf + bands, :] += grad_out @ self.kernel.values[kt, kf].T
        self.kernel.accumulate(grad_kernel)
        self.bias.accumulate(grad_out.sum(axis=(0, 1, 2)))
        return grad_padded[:, 1:-1, 1:-1, :]

    def parameters(self):
        return {'kernel': self.kernel, 'bias': self.bias}


class MaxPoolFreq(Module):
    """
    Max pooling along the frequency axis only; the time axis is untouched.

    Gradients are routed to the first maximum of each pooling window.
    """
    def __init__(self, pool: int):
        if pool < 1:
            raise InvalidArgumentError(f"Pool factor must be at least 1, got {pool}.")
        self.pool = pool
        self._argmax = None
        self._input_shape = None

    def forward(self, x, mode=INFER):
        _check_mode(mode)
        if x.ndim != 4:
            raise ShapeError(f"MaxPoolFreq expects B x T x F x C input, got {x.shape}.")
        batch, frames, bands, channels = x.shape
        if bands % self.pool != 0:
            raise ShapeError(
                f"Frequency dimension {bands} is not divisible by pool factor {self.pool}.")
        windows = x.reshape(batch, frames, bands // self.pool, self.pool, channels)
        argmax = windows.argmax(axis=3)
        self._argmax = argmax
        self._input_shape = x.shape
        return np.take_along_axis(windows, argmax[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def backward(self, grad_out):
        batch, frames, bands, channels = self._input_shape
        grad_windows = np.zeros((batch, frames, bands // self.pool, self.pool, channels),
                                dtype=grad_out.dtype)
        np.put_along_axis(grad_windows, self._argmax[:, :, :, None, :],
                          grad_out[:, :, :, None, :], axis=3)
        return grad_windows.reshape(self._input_shape)


class BatchNorm(Module):
    """
    Batch normalisation over every axis except the trailing channel axis.

    Train mode normalises with the batch statistics and updates the running
    averages with the given momentum; infer mode uses the running averages.
    """
    def __init__(self, channels: int, epsilon: float = 1e-5, momentum: float = 0.99,
                 dtype=np.float64):
        self.channels = channels
        self.epsilon = epsilon
        self.momentum = momentum
        self.gamma = ones((channels,), dtype=dtype)
        self.beta = zeros((channels,), dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def forward(self, x, mode=INFER):
        _check_mode(mode)
        if x.shape[-1] != self.channels:
            raise ShapeError(f"BatchNorm expects {self.channels} channels, got {x.shape[-1]}.")
        axes = tuple(range(x.ndim - 1))
        if mode == TRAIN:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = self.momentum * self.running_mean + (1.0 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1.0 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        x_hat = (x - mean) * inv_std
        self._cache = (mode, x_hat, inv_std, axes)
        return self.gamma.values * x_hat + self.beta.values

    def backward(self, grad_out):
        mode, x_hat, inv_std, axes = self._cache
        self.gamma.accumulate((grad_out * x_hat).sum(axis=axes))
        self.beta.accumulate(grad_out.sum(axis=axes))
        grad_x_hat = grad_out * self.gamma.values
        if mode == INFER:
            return grad_x_hat * inv_std
        count = x_hat.size // self.channels
        return (inv_std / count) * (
            count * grad_x_hat
            - grad_x_hat.sum(axis=axes)
            - x_hat * (grad_x_hat * x_hat).sum(axis=axes)
        )

    def parameters(self):
        return {'gamma': self.gamma, 'beta': self.beta}

    def buffers(self):
        return {'running_mean': self.running_mean, 'running_var': self.running_var}

    def load_buffers(self, buffers: dict[str, np.ndarray]) -> None:
        self.running_mean = np.array(buffers['running_mean'], dtype=self.gamma.values.dtype)
        self.running_var = np.array(buffers['running_var'], dtype=self.gamma.values.dtype)


class Dense(Module):
    """Fully-connected layer applied independently to every leading index (time distributed)."""
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 activation: str = 'linear', dtype=np.float64):
        if activation not in ACTIVATIONS:
            raise InvalidArgumentError(
                f"Unknown activation '{activation}'; expected one of {sorted(ACTIVATIONS)}.")
        self.in_features = in_features
        self.out_features = out_features
        self.activation = activation
        self.weight = glorot_uniform(rng, (in_features, out_features),
                                     fan_in=in_features, fan_out=out_features, dtype=dtype)
        self.bias = zeros((out_features,), dtype=dtype)
        self._cache = None

    def forward(self, x, mode=INFER):
        _check_mode(mode)
        if x.shape[-1] != self.in_features:
            raise ShapeError(
                f"Dense expects trailing dimension {self.in_features}, got {x.shape[-1]}.")
        pre = x @ self.weight.values + self.bias.values
        out = ACTIVATIONS[self.activation][0](pre)
        self._cache = (x, pre, out)
        return out

    def backward(self, grad_out):
        x, pre, out = self._cache
        grad_pre = grad_out * ACTIVATIONS[self.activation][1](pre, out)
        flat_x = x.reshape(-1, self.in_features)
        flat_grad = grad_pre.reshape(-1, self.out_features)
        self.weight.accumulate(flat_x.T @ flat_grad)
        self.bias.accumulate(flat_grad.sum(axis=0))
        return grad_pre @ self.weight.values.T

    def parameters(self):
        return {'weight': self.weight, 'bias': self.bias}


class Activation(Module):
    """Elementwise sigmoid, tanh, relu or identity."""
    def __init__(self, kind: str):
        if kind not in ACTIVATIONS:
            raise InvalidArgumentError(f"Unknown activation '{kind}'.")
        self.kind = kind
        self._cache = None

    def forward(self, x, mode=INFER):
        _check_mode(mode)
        out = ACTIVATIONS[self.kind][0](x)
        self._cache = (x, out)
        return out

    def backward(self, grad_out):
        x, out = self._cache
        return grad_out * ACTIVATIONS[self.kind][1](x, out)


class Dropout(Module):
    """
    Inverted dropout: in train mode each element is zeroed with probability
    `rate` and survivors are scaled by 1 / (1 - rate). Infer mode is the
    identity and draws no random numbers.
    """
    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise InvalidArgumentError(f"Dropout rate must be in [0, 1), got {rate}.")
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x, mode=INFER):
        _check_mode(mode)
        if mode == INFER or self.rate == 0.0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask


class FlattenFrequency(Module):
    """B x T x F x C -> B x T x (F * C), used after the frequency axis is pooled down."""
    def __init__(self):
        self._shape = None

    def forward(self, x, mode=INFER):
        self._shape = x.shape
        return x.reshape(x.shape[0], x.shape[1], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)


class TimeMean(Module):
    """Mean over the time axis: B x T x C -> B x C."""
    def __init__(self):
        self._frames = None

    def forward(self, x, mode=INFER):
        if x.shape[1] < 1:
            raise ShapeError("Cannot average over zero frames.")
        self._frames = x.shape[1]
        return x.mean(axis=1)

    def backward(self, grad_out):
        return np.repeat(grad_out[:, None, :] / self._frames, self._frames, axis=1)


class TimeMax(Module):
    """Max over the time axis: B x T x C -> B x C, gradient to the first maximum."""
    def __init__(self):
        self._argmax = None
        self._shape = None

    def forward(self, x, mode=INFER):
        self._shape = x.shape
        self._argmax = x.argmax(axis=1)
        return np.take_along_axis(x, self._argmax[:, None, :], axis=1)[:, 0, :]

    def backward(self, grad_out):
        grad = np.zeros(self._shape, dtype=grad_out.dtype)
        np.put_along_axis(grad, self._argmax[:, None, :], grad_out[:, None, :], axis=1)
        return grad


class ContextWindow(Module):
    """
    Stacks each frame with its neighbours: B x T x F -> B x T x (context * F).

    Frames beyond the clip edges repeat the first or last frame.
    """
    def __init__(self, context: int):
        if context < 1 or context % 2 == 0:
            raise InvalidArgumentError(f"Context must be a positive odd frame count, got {context}.")
        self.context = context
        self._indices = None
        self._shape = None

    def forward(self, x, mode=INFER):
        frames = x.shape[1]
        half = self.context // 2
        offsets = np.arange(-half, half + 1)
        self._indices = np.clip(np.arange(frames)[:, None] + offsets[None, :], 0, frames - 1)
        self._shape = x.shape
        stacked = x[:, self._indices, :]
        return stacked.reshape(x.shape[0], frames, self.context * x.shape[2])

    def backward(self, grad_out):
        batch, frames, bands = self._shape
        grad = np.zeros(self._shape, dtype=grad_out.dtype)
        per_offset = grad_out.reshape(batch, frames, self.context, bands)
        # Transposed views so np.add.at can scatter along time.
        target = grad.transpose(1, 0, 2)
        for k in range(self.context):
            np.add.at(target, self._indices[:, k], per_offset[:, :, k, :].transpose(1, 0, 2))
        return grad
