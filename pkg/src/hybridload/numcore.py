"""Small reverse-mode differentiation kernel on top of numpy.

Values are float64 arrays wrapped in :class:`Tensor`. Every primitive checks
its output for NaN/Inf and, when a :class:`GradientTape` is active, records a
backward closure. Leading axes are treated as batch axes, so ``affine`` on an
``(B, T, n)`` input applies the same weights to every row.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.special import expit

__all__ = [
    "NonFiniteError",
    "Tensor",
    "GradientTape",
    "constant",
    "affine",
    "linear",
    "add",
    "sigmoid",
    "tanh",
    "relu",
    "hadamard",
    "concat",
    "take",
    "narrow",
    "lstm_step",
    "mean_abs_error",
    "backward",
    "AdamState",
    "adam_step",
    "clip_global_norm",
    "check_gradients",
]


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "name")

    def __init__(self, data, parents=(), backward_fn=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


_ACTIVE: list["GradientTape"] = []


class GradientTape:
    """Records operations for one forward pass.

    Use as a context manager; ``watch`` turns raw arrays into leaf tensors
    whose gradients :func:`backward` will report.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.leaves: dict[str, Tensor] = {}

    def __enter__(self) -> "GradientTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def watch(self, params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        out = {}
        for key, value in params.items():
            leaf = Tensor(value, name=key)
            self.leaves[key] = leaf
            out[key] = leaf
        return out


def _tape() -> GradientTape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """Wrap data as a tensor that is never differentiated."""
    return Tensor(x)


def _emit(op: str, out: np.ndarray, parents: tuple[Tensor, ...], fn) -> Tensor:
    if not np.isfinite(out).all():
        raise NonFiniteError(f"{op}: non-finite value in output")
    node = Tensor(out, parents, fn)
    tape = _tape()
    if tape is not None:
        tape.nodes.append(node)
    return node


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# forward primitives


def linear(x, W) -> Tensor:
    """``x @ W.T`` over the last axis of ``x``."""
    x, W = _as_tensor(x), _as_tensor(W)
    if W.data.ndim != 2 or x.data.shape[-1] != W.data.shape[1]:
        raise ValueError(f"linear: shape mismatch x{x.shape} vs W{W.shape}")
    xd, Wd = x.data, W.data

    def fn(g, acc):
        acc(x, g @ Wd)
        acc(W, g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1]))

    return _emit("linear", xd @ Wd.T, (x, W), fn)


def affine(W, x, b) -> Tensor:
    """``W x + b`` applied to every row along the last axis of ``x``."""
    W, x, b = _as_tensor(W), _as_tensor(x), _as_tensor(b)
    if (
        W.data.ndim != 2
        or x.data.shape[-1] != W.data.shape[1]
        or b.data.shape != (W.data.shape[0],)
    ):
        raise ValueError(f"affine: shape mismatch W{W.shape} x{x.shape} b{b.shape}")
    xd, Wd = x.data, W.data

    def fn(g, acc):
        g2 = g.reshape(-1, g.shape[-1])
        acc(x, g @ Wd)
        acc(W, g2.T @ xd.reshape(-1, xd.shape[-1]))
        acc(b, g2.sum(axis=0))

    return _emit("affine", xd @ Wd.T + b.data, (W, x, b), fn)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}") from None

    def fn(g, acc):
        acc(a, _unbroadcast(g, a.shape))
        acc(b, _unbroadcast(g, b.shape))

    return _emit("add", out, (a, b), fn)


def hadamard(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"hadamard: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def fn(g, acc):
        acc(a, g * bd)
        acc(b, g * ad)

    return _emit("hadamard", ad * bd, (a, b), fn)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = expit(x.data)

    def fn(g, acc):
        acc(x, g * out * (1.0 - out))

    return _emit("sigmoid", out, (x,), fn)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def fn(g, acc):
        acc(x, g * (1.0 - out * out))

    return _emit("tanh", out, (x,), fn)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def fn(g, acc):
        acc(x, g * mask)

    return _emit("relu", np.where(mask, x.data, 0.0), (x,), fn)


def concat(parts: Iterable, axis: int = -1) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = [p.shape for p in parts]
        raise ValueError(f"concat: shape mismatch {shapes}") from None
    bounds = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def fn(g, acc):
        for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
            acc(p, piece)

    return _emit("concat", out, parts, fn)


def take(x, index: int, axis: int = 1) -> Tensor:
    """Select one position along ``axis`` (drops that axis)."""
    x = _as_tensor(x)
    out = x.data[(slice(None),) * axis + (index,)]
    where = (slice(None),) * axis + (index,)

    def fn(g, acc):
        acc(x, g, where)

    return _emit("take", out, (x,), fn)


def narrow(x, start: int, stop: int) -> Tensor:
    """Slice ``[start, stop)`` of the last axis."""
    x = _as_tensor(x)
    where = (..., slice(start, stop))

    def fn(g, acc):
        acc(x, g, where)

    return _emit("narrow", x.data[where], (x,), fn)


def lstm_step(pre, c_prev) -> Tensor:
    """Gate nonlinearities of one LSTM step, fused.

    ``pre`` holds the four gate pre-activations ``[g | i | f | o]`` on its last
    axis (each ``n_h`` wide). Returns ``[h | c]`` with
    ``c = f*c_prev + i*tanh(g)`` and ``h = o*tanh(c)``.
    """
    pre, c_prev = _as_tensor(pre), _as_tensor(c_prev)
    n_h = c_prev.data.shape[-1]
    if pre.data.shape[-1] != 4 * n_h or pre.data.shape[:-1] != c_prev.data.shape[:-1]:
        raise ValueError(f"lstm_step: shape mismatch pre{pre.shape} vs c{c_prev.shape}")
    z = pre.data
    g = np.tanh(z[..., :n_h])
    ifo = expit(z[..., n_h:])
    i, f, o = ifo[..., :n_h], ifo[..., n_h : 2 * n_h], ifo[..., 2 * n_h :]
    cp = c_prev.data
    c = f * cp + i * g
    tc = np.tanh(c)
    h = o * tc

    def fn(grad, acc):
        gh, gc = grad[..., :n_h], grad[..., n_h:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dpre = np.empty_like(z)
        dpre[..., :n_h] = dc * i * (1.0 - g * g)
        dpre[..., n_h : 2 * n_h] = dc * g * i * (1.0 - i)
        dpre[..., 2 * n_h : 3 * n_h] = dc * cp * f * (1.0 - f)
        dpre[..., 3 * n_h :] = gh * tc * o * (1.0 - o)
        acc(pre, dpre)
        acc(c_prev, dc * f)

    return _emit("lstm_step", np.concatenate([h, c], axis=-1), (pre, c_prev), fn)


def mean_abs_error(pred, target) -> Tensor:
    """Batch mean of per-sample 1-norms; the last axis is the sample vector."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mean_abs_error: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.reshape(-1, diff.shape[-1]).shape[0] if diff.ndim > 1 else 1
    out = np.abs(diff).sum() / n
    # sign(0) = 0 is the subgradient used at the kink
    sgn = np.sign(diff)

    def fn(g, acc):
        acc(pred, g * sgn / n)
        acc(target, -g * sgn / n)

    return _emit("mean_abs_error", np.asarray(out), (pred, target), fn)


# --------------------------------------------------------------------------
# reverse pass


def backward(tape: GradientTape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` for every watched leaf of ``tape``.

    Nodes are visited in reverse recording order, so accumulation order is
    fixed and results are reproducible.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def acc(node: Tensor, g: np.ndarray, where=None) -> None:
        key = id(node)
        cur = grads.get(key)
        if where is not None:
            if cur is None:
                cur = grads[key] = np.zeros_like(node.data)
            cur[where] += g
        elif cur is None:
            grads[key] = np.array(g, dtype=np.float64, copy=True).reshape(node.data.shape)
        else:
            cur += g

    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node.backward_fn is None:
            continue
        node.backward_fn(g, acc)

    return {
        key: grads.get(id(leaf), np.zeros_like(leaf.data))
        for key, leaf in tape.leaves.items()
    }


# --------------------------------------------------------------------------
# optimisation


class AdamState:
    """Moment accumulators for Adam, keyed by parameter name."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    learning_rate: float,
    keys: Iterable[str] | None = None,
) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Only ``keys`` (default: every key in ``grads``) are updated.
    """
    keys = list(grads) if keys is None else list(keys)
    for k in keys:
        g = grads[k]
        if g.shape != params[k].shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != parameter {k}{params[k].shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"adam_step: non-finite gradient for {k}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for k in keys:
        g = grads[k]
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[k] = params[k] - learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint 2-norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


# --------------------------------------------------------------------------
# finite-difference checker


def check_gradients(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    grads: Mapping[str, np.ndarray] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` maps a dict of tensors to a scalar tensor. If ``grads`` is
    given it is compared instead of the tape result (useful for fault
    injection). The denominator per entry is ``max(|a|, |fd|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    if grads is None:
        tape = GradientTape()
        with tape:
            loss = loss_fn(tape.watch(base))
        grads = backward(tape, loss)

    def f(p):
        return float(loss_fn({k: Tensor(v) for k, v in p.items()}).data)

    worst = 0.0
    for key, value in base.items():
        flat = value.reshape(-1)
        analytic = np.asarray(grads[key]).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = f(base)
            flat[idx] = orig - h
            down = f(base)
            flat[idx] = orig
            fd = (up - down) / (2.0 * h)
            a = analytic[idx]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst
