"""
Adam optimizer over named parameter tensors.
"""
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """
    Applies one bias-corrected Adam update in place and zeroes the gradients.

    Moment buffers are created lazily the first time a parameter name is seen.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t

    for name in sorted(params):
        tensor = params[name]
        g = tensor.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.values)
            state.v[name] = np.zeros_like(tensor.values)

        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)

        m_hat = m / bc1
        v_hat = v / bc2
        tensor.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        tensor.zero_grad()
