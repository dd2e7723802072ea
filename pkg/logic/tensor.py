"""
Tensors with paired gradient buffers, and parameter initialisation.
"""
import numpy as np

from exceptions import ShapeError

TRAIN = 'train'
INFER = 'infer'
MODES = (TRAIN, INFER)


class Tensor:
    """
    An n-dimensional value with a same-shaped gradient buffer.

    Gradients accumulate across backward passes until zero_grad() is called
    (the optimizer does this after every step).
    """
    def __init__(self, values, dtype=np.float64):
        self.values = np.array(values, dtype=dtype)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.values.shape:
            raise ShapeError(f"Gradient shape {grad.shape} does not match tensor shape {self.shape}.")
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def assign(self, values: np.ndarray) -> None:
        """Replaces the values in place, keeping dtype and shape."""
        values = np.asarray(values)
        if values.shape != self.values.shape:
            raise ShapeError(f"Cannot assign shape {values.shape} to tensor of shape {self.shape}.")
        self.values[...] = values

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.values.dtype})"


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int,
                   dtype=np.float64) -> Tensor:
    """Glorot/Xavier uniform initialisation: U(-a, a), a = sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), dtype=dtype)


def zeros(shape: tuple[int, ...], dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape), dtype=dtype)


def ones(shape: tuple[int, ...], dtype=np.float64) -> Tensor:
    return Tensor(np.ones(shape), dtype=dtype)
