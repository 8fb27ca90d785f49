"""Small learned blocks (linear maps, MLPs, an LSTM cell) on the tensor tape."""

from __future__ import annotations

import numpy as np

from .tensor import (
    ParameterStore,
    Tensor,
    add,
    concat,
    linear,
    mul,
    relu,
    sigmoid,
    slice_axis,
    tanh,
    zeros_init,
)


class Linear:
    def __init__(self, store: ParameterStore, prefix: str, in_dim: int, out_dim: int):
        self.weight = store.parameter(f"{prefix}.W", (in_dim, out_dim))
        self.bias = store.parameter(f"{prefix}.b", (1, out_dim), zeros_init)
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class MLP:
    """Linear stack with ReLU between layers and a linear output."""

    def __init__(self, store: ParameterStore, prefix: str, dims: list[int]):
        self.layers = [
            Linear(store, f"{prefix}.{k}", dims[k], dims[k + 1]) for k in range(len(dims) - 1)
        ]
        self.in_dim = dims[0]
        self.out_dim = dims[-1]

    def __call__(self, x: Tensor) -> Tensor:
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1:
                x = relu(x)
        return x


def _lstm_bias_init(hidden: int):
    # forget gate bias starts at +1 so early training does not wipe the cell
    def init(rng: np.random.Generator, shape: tuple[int, ...], dtype=np.float32) -> np.ndarray:
        b = np.zeros(shape, dtype=dtype)
        b[0, hidden : 2 * hidden] = 1.0
        return b

    return init


class LSTMCell:
    """Fused-gate LSTM cell; gate order is input, forget, candidate, output."""

    def __init__(self, store: ParameterStore, prefix: str, input_dim: int, hidden_dim: int):
        self.hidden_dim = hidden_dim
        self.weight = store.parameter(f"{prefix}.W", (input_dim + hidden_dim, 4 * hidden_dim))
        self.bias = store.parameter(f"{prefix}.b", (1, 4 * hidden_dim), _lstm_bias_init(hidden_dim))
        self.dtype = store.dtype

    def initial_state(self) -> tuple[Tensor, Tensor]:
        shape = (1, self.hidden_dim)
        return (
            Tensor(np.zeros(shape), dtype=self.dtype),
            Tensor(np.zeros(shape), dtype=self.dtype),
        )

    def step(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h_prev, c_prev = state
        gates = linear(concat([x, h_prev], axis=1), self.weight, self.bias)
        hd = self.hidden_dim
        gate_in = sigmoid(slice_axis(gates, 1, 0, hd))
        gate_forget = sigmoid(slice_axis(gates, 1, hd, 2 * hd))
        candidate = tanh(slice_axis(gates, 1, 2 * hd, 3 * hd))
        gate_out = sigmoid(slice_axis(gates, 1, 3 * hd, 4 * hd))
        c = add(mul(gate_forget, c_prev), mul(gate_in, candidate))
        h = mul(gate_out, tanh(c))
        return h, c

    def run(self, rows: list[Tensor]) -> Tensor:
        """Feed each (1,d) row in order; return the final hidden state."""
        state = self.initial_state()
        h = state[0]
        for row in rows:
            h, c = self.step(row, state)
            state = (h, c)
        return h
