"""
Bidirectional GRU layer with backpropagation through time.

Per direction, with row-vector inputs:
    z_t  = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
    r_t  = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
    hh_t = tanh(x_t W_h + (r_t * h_{t-1}) U_h + b_h)
    h_t  = (1 - z_t) * h_{t-1} + z_t * hh_t
with h_0 = 0. The layer output concatenates the forward and the
time-reversed backward hidden states, so the frame count is preserved.
"""
import numpy as np

from exceptions import ShapeError
from .layers import Module, sigmoid, _check_mode
from .tensor import Tensor, INFER, glorot_uniform, zeros

GATES = ('z', 'r', 'h')


class GRUDirection(Module):
    """A single-direction GRU over B x T x Din sequences."""
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.W = {g: glorot_uniform(rng, (input_size, hidden_size), input_size, hidden_size, dtype)
                  for g in GATES}
        self.U = {g: glorot_uniform(rng, (hidden_size, hidden_size), hidden_size, hidden_size, dtype)
                  for g in GATES}
        self.b = {g: zeros((hidden_size,), dtype) for g in GATES}
        self._cache = None

    def forward(self, x, mode=INFER):
        _check_mode(mode)
        batch, frames, _ = x.shape
        # Input projections for all frames at once.
        proj = {g: x @ self.W[g].values + self.b[g].values for g in GATES}

        h = np.zeros((batch, self.hidden_size), dtype=proj['z'].dtype)
        outputs = np.empty((batch, frames, self.hidden_size), dtype=h.dtype)
        h_prev_all = np.empty_like(outputs)
        z_all, r_all, hh_all = np.empty_like(outputs), np.empty_like(outputs), np.empty_like(outputs)
        for t in range(frames):
            z = sigmoid(proj['z'][:, t] + h @ self.U['z'].values)
            r = sigmoid(proj['r'][:, t] + h @ self.U['r'].values)
            hh = np.tanh(proj['h'][:, t] + (r * h) @ self.U['h'].values)
            h_prev_all[:, t] = h
            h = (1.0 - z) * h + z * hh
            z_all[:, t], r_all[:, t], hh_all[:, t] = z, r, hh
            outputs[:, t] = h
        self._cache = (x, h_prev_all, z_all, r_all, hh_all)
        return outputs

    def backward(self, grad_out):
        x, h_prev_all, z_all, r_all, hh_all = self._cache
        batch, frames, _ = grad_out.shape
        grad_pre = {g: np.empty_like(grad_out) for g in GATES}
        reset_state_all = np.empty_like(grad_out)

        U = {g: self.U[g].values for g in GATES}
        grad_h_next = np.zeros((batch, self.hidden_size), dtype=grad_out.dtype)
        for t in reversed(range(frames)):
            h_prev, z, r, hh = h_prev_all[:, t], z_all[:, t], r_all[:, t], hh_all[:, t]
            grad_h = grad_out[:, t] + grad_h_next

            grad_hh = grad_h * z
            grad_z = grad_h * (hh - h_prev)
            grad_h_prev = grad_h * (1.0 - z)

            grad_pre_h = grad_hh * (1.0 - hh * hh)
            grad_rh = grad_pre_h @ U['h'].T
            grad_r = grad_rh * h_prev
            grad_h_prev += grad_rh * r

            grad_pre_z = grad_z * z * (1.0 - z)
            grad_pre_r = grad_r * r * (1.0 - r)
            grad_h_prev += grad_pre_z @ U['z'].T + grad_pre_r @ U['r'].T

            grad_pre['z'][:, t], grad_pre['r'][:, t], grad_pre['h'][:, t] = grad_pre_z, grad_pre_r, grad_pre_h
            reset_state_all[:, t] = r * h_prev
            grad_h_next = grad_h_prev

        grad_x = np.zeros_like(x, dtype=grad_out.dtype)
        for g in GATES:
            self.W[g].accumulate(np.tensordot(x, grad_pre[g], axes=([0, 1], [0, 1])))
            self.b[g].accumulate(grad_pre[g].sum(axis=(0, 1)))
            grad_x += grad_pre[g] @ self.W[g].values.T
        # The candidate gate sees the reset-scaled state, the other gates the raw state.
        self.U['z'].accumulate(np.tensordot(h_prev_all, grad_pre['z'], axes=([0, 1], [0, 1])))
        self.U['r'].accumulate(np.tensordot(h_prev_all, grad_pre['r'], axes=([0, 1], [0, 1])))
        self.U['h'].accumulate(np.tensordot(reset_state_all, grad_pre['h'], axes=([0, 1], [0, 1])))
        return grad_x

    def parameters(self):
        params: dict[str, Tensor] = {}
        for g in GATES:
            params[f"W_{g}"] = self.W[g]
            params[f"U_{g}"] = self.U[g]
            params[f"b_{g}"] = self.b[g]
        return params


class BiGRU(Module):
    """Bidirectional GRU: B x T x Din -> B x T x 2*Dh."""
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.forward_gru = GRUDirection(input_size, hidden_size, rng, dtype)
        self.backward_gru = GRUDirection(input_size, hidden_size, rng, dtype)

    def forward(self, x, mode=INFER):
        if x.ndim != 3 or x.shape[-1] != self.input_size:
            raise ShapeError(f"BiGRU expects B x T x {self.input_size} input, got {x.shape}.")
        fw = self.forward_gru.forward(x, mode)
        bw = self.backward_gru.forward(x[:, ::-1], mode)
        return np.concatenate([fw, bw[:, ::-1]], axis=-1)

    def backward(self, grad_out):
        dh = self.hidden_size
        grad_fw = self.forward_gru.backward(grad_out[..., :dh])
        grad_bw = self.backward_gru.backward(np.ascontiguousarray(grad_out[:, ::-1, dh:]))
        return grad_fw + grad_bw[:, ::-1]

    def parameters(self):
        params = {f"forward.{k}": v for k, v in self.forward_gru.parameters().items()}
        params.update({f"backward.{k}": v for k, v in self.backward_gru.parameters().items()})
        return params
