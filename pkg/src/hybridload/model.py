"""Hybrid LSTM + FCNN forecaster.

Temporal branch: per-hour embedding followed by an LSTM over the history
window; the last hidden state summarises the week. Non-temporal branch: a
three-layer fully connected block over ``Q``. Both are concatenated and fed
through a two-layer output block producing the 24 next-day values.

All functions accept either raw arrays or :class:`~hybridload.numcore.Tensor`
parameters, so the same code serves plain evaluation and taped training.
Inputs may carry a leading batch axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, NamedTuple

import numpy as np

from . import numcore as nc
from .numcore import Tensor

EMBEDDING = ("W_e", "b_e")
LSTM = (
    "W_gh", "W_ih", "W_fh", "W_oh",
    "W_gs", "W_is", "W_fs", "W_os",
    "b_g", "b_i", "b_f", "b_o",
)
FCNN = ("W_f1", "W_f2", "W_f3", "b_f1", "b_f2", "b_f3")
OUTPUT = ("W_o1", "b_o1", "W_o2", "b_o2")


@dataclass(frozen=True)
class ModelDims:
    """Layer sizes. ``q_dim = 0`` removes the FCNN branch entirely."""

    seq_len: int = 168
    in_dim: int = 34
    d: int = 10
    n_h: int = 128
    q_dim: int = 32
    out_len: int = 24

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name == "q_dim":
                if value < 0:
                    raise ValueError("q_dim must be nonnegative")
            elif value <= 0:
                raise ValueError(f"{name} must be positive")
        # a scalar-only input (in_dim 1) is lifted, not compressed
        if self.in_dim > 1 and not self.d < self.in_dim:
            raise ValueError(f"embedding size d={self.d} must be below in_dim={self.in_dim}")

    @property
    def has_fcnn(self) -> bool:
        return self.q_dim > 0


def param_shapes(dims: ModelDims) -> dict[str, tuple[int, ...]]:
    n_h, d = dims.n_h, dims.d
    shapes: dict[str, tuple[int, ...]] = {"W_e": (d, dims.in_dim), "b_e": (d,)}
    for gate in "gifo":
        shapes[f"W_{gate}h"] = (n_h, n_h)
    for gate in "gifo":
        shapes[f"W_{gate}s"] = (n_h, d)
    for gate in "gifo":
        shapes[f"b_{gate}"] = (n_h,)
    if dims.has_fcnn:
        shapes.update(
            W_f1=(n_h, dims.q_dim), W_f2=(n_h, n_h), W_f3=(n_h, n_h),
            b_f1=(n_h,), b_f2=(n_h,), b_f3=(n_h,),
        )
    head_in = 2 * n_h if dims.has_fcnn else n_h
    shapes.update(W_o1=(n_h, head_in), b_o1=(n_h,), W_o2=(dims.out_len, n_h), b_o2=(dims.out_len,))
    return shapes


def partition(name: str) -> str:
    """``'embedding'``, ``'output'`` or ``'rest'``."""
    if name in EMBEDDING:
        return "embedding"
    if name in OUTPUT:
        return "output"
    return "rest"


def init_params(dims: ModelDims, seed: int = 0, forget_bias: float = 0.0) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases (``b_f`` optionally ``forget_bias``)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(dims).items():
        if len(shape) == 2:
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    if forget_bias:
        params["b_f"][:] = forget_bias
    return params


def check_params(params: Mapping[str, np.ndarray], dims: ModelDims) -> None:
    shapes = param_shapes(dims)
    if set(params) != set(shapes):
        missing = sorted(set(shapes) - set(params))
        extra = sorted(set(params) - set(shapes))
        raise ValueError(f"parameter names differ: missing {missing}, unexpected {extra}")
    for name, shape in shapes.items():
        got = np.shape(params[name].data if isinstance(params[name], Tensor) else params[name])
        if got != shape:
            raise ValueError(f"parameter {name} has shape {got}, expected {shape}")


# --------------------------------------------------------------------------
# blocks


class LstmCellState(NamedTuple):
    h: Tensor
    c: Tensor


def embed(x, params) -> Tensor:
    return nc.affine(params["W_e"], x, params["b_e"])


def _gates(pre_g, pre_i, pre_f, pre_o, prev: LstmCellState) -> LstmCellState:
    g = nc.tanh(pre_g)
    i = nc.sigmoid(pre_i)
    f = nc.sigmoid(pre_f)
    c = nc.add(nc.hadamard(f, prev.c), nc.hadamard(i, g))
    o = nc.sigmoid(pre_o)
    h = nc.hadamard(o, nc.tanh(c))
    return LstmCellState(h, c)


def lstm_cell(s, prev: LstmCellState, params) -> LstmCellState:
    pre = [
        nc.add(nc.linear(prev.h, params[f"W_{k}h"]), nc.affine(params[f"W_{k}s"], s, params[f"b_{k}"]))
        for k in "gifo"
    ]
    return _gates(*pre, prev)


def zero_state(batch_shape: tuple[int, ...], n_h: int) -> LstmCellState:
    z = nc.constant(np.zeros(batch_shape + (n_h,)))
    return LstmCellState(z, z)


def lstm_block(X, params) -> Tensor:
    """Run the embedding and LSTM over every row of ``X``; return the last ``h``.

    Same recurrence as chaining :func:`lstm_cell`, reorganised for speed: the
    four gates are stacked so each step is one matrix product plus the fused
    :func:`~hybridload.numcore.lstm_step`.
    """
    # time-major layout so each step reads a contiguous slice; X is data, never differentiated
    X = np.ascontiguousarray(np.moveaxis(_data(X), -2, 0))
    S = embed(X, params)
    n_h = np.shape(_data(params["W_gh"]))[0]
    W_h = nc.concat([params[f"W_{k}h"] for k in "gifo"], axis=0)
    W_s = nc.concat([params[f"W_{k}s"] for k in "gifo"], axis=0)
    b = nc.concat([params[f"b_{k}"] for k in "gifo"], axis=0)
    proj = nc.affine(W_s, S, b)
    h = c = nc.constant(np.zeros(X.shape[1:-1] + (n_h,)))
    for j in range(X.shape[0]):
        pre = nc.take(proj, j, axis=0)
        if j:
            pre = nc.add(pre, nc.linear(h, W_h))
        hc = nc.lstm_step(pre, c)
        h, c = nc.narrow(hc, 0, n_h), nc.narrow(hc, n_h, 2 * n_h)
    return h


def fcnn_block(Q, params) -> Tensor:
    z = nc.relu(nc.affine(params["W_f1"], Q, params["b_f1"]))
    z = nc.relu(nc.affine(params["W_f2"], z, params["b_f2"]))
    return nc.affine(params["W_f3"], z, params["b_f3"])


def output_block(h_f, params) -> Tensor:
    z = nc.relu(nc.affine(params["W_o1"], h_f, params["b_o1"]))
    return nc.affine(params["W_o2"], z, params["b_o2"])


def forward(X, Q, params) -> Tensor:
    """Normalised next-day forecast ``(..., out_len)``."""
    h_last = lstm_block(X, params)
    if "W_f1" in params:
        h_f = nc.concat([h_last, fcnn_block(Q, params)], axis=-1)
    else:
        h_f = h_last
    return output_block(h_f, params)


def predict(X, Q, params) -> np.ndarray:
    """Forward pass on plain arrays, no tape."""
    return forward(X, Q, {k: _data(v) for k, v in params.items()}).data


def _data(x):
    return x.data if isinstance(x, Tensor) else x
