"""Minimal float64 tensor library with reverse-mode autodiff on an explicit tape.

Covers exactly the operations the sequence models in this package need
(ranks <= 2, LSTM steps fused into single tape nodes) plus a
central-difference gradient checker. Forward passes are deterministic;
tapes are single-writer and thread-local, so distinct models may train
in parallel threads.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "Tensor",
    "Tape",
    "tensor",
    "affine",
    "softmax",
    "logsumexp",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "concat",
    "stack",
    "dot",
    "layer_norm",
    "LstmCellParams",
    "BiLstmParams",
    "lstm_step",
    "bilstm_encode",
    "init_lstm_cell",
    "init_bilstm",
    "grad_check",
    "GradCheckReport",
    "sgd_step",
]


class DimensionError(ValueError):
    """Shape mismatch between operands; the message names both shapes."""


_STATE = threading.local()


def _tape_stack() -> list:
    stack = getattr(_STATE, "tapes", None)
    if stack is None:
        stack = []
        _STATE.tapes = stack
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array (rank <= 2 in practice) tracked by the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_traced")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True)
        if 0 in arr.shape:
            raise ValueError(f"zero-length axis in tensor shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._traced = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def to_list(self):
        return self.data.tolist()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; every op routes through the module-level primitives
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


@dataclass
class Node:
    inputs: tuple
    outputs: tuple
    backward: Callable


class Tape:
    """Ordered record of operations; backward walks it in exact reverse."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self, "tape stack corrupted"
        return False

    def backward(self, loss: Tensor) -> None:
        if loss.shape != ():
            raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"non-finite loss {float(loss.data)}")
        # zero-init all accumulators touched by this tape, then seed the loss
        seen = set()
        for node in self.nodes:
            for t in node.inputs + node.outputs:
                if id(t) not in seen:
                    seen.add(id(t))
                    t.grad = np.zeros_like(t.data)
        if loss.grad is None:
            loss.grad = np.zeros_like(loss.data)
        loss.grad = loss.grad + 1.0
        for node in reversed(self.nodes):
            out_grads = tuple(o.grad for o in node.outputs)
            if all(og is None or not og.any() for og in out_grads):
                continue
            out_grads = tuple(
                og if og is not None else np.zeros_like(o.data)
                for og, o in zip(out_grads, node.outputs)
            )
            in_grads = node.backward(*out_grads)
            for t, g in zip(node.inputs, in_grads):
                if g is None:
                    continue
                if t.requires_grad or t._traced:
                    t.grad += g


def _record(inputs: tuple, outputs: tuple, backward: Callable) -> None:
    tape = active_tape()
    if tape is None:
        return
    if not any(t.requires_grad or t._traced for t in inputs):
        return
    for out in outputs:
        out._traced = True
    tape.nodes.append(Node(tuple(inputs), tuple(outputs), backward))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)
    _record(
        (a, b),
        (out,),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)
    _record(
        (a, b),
        (out,),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data
    _record(
        (a, b),
        (out,),
        lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)),
    )
    return out


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    out = Tensor(a.data * s)
    _record((a,), (out,), lambda g: (g * s,))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise DimensionError(f"matmul supports ranks 1-2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def backward(g):
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        return g @ bd.T, ad.T @ g

    _record((a, b), (out,), backward)
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"dot expects equal-length vectors, got {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data
    _record((a, b), (out,), lambda g: (g * bd, g * ad))
    return out


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.T)
    _record((a,), (out,), lambda g: (g.T,))
    return out


def reshape(a: Tensor, shape: tuple) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    old = a.shape
    _record((a,), (out,), lambda g: (g.reshape(old),))
    return out


def take(a: Tensor, idx) -> Tensor:
    """Basic indexing (ints, slices, tuples thereof) with scatter-add backward."""
    a = _as_tensor(a)
    out = Tensor(a.data[idx])
    shape = a.shape

    def backward(g):
        ga = np.zeros(shape)
        np.add.at(ga, idx, g)
        return (ga,)

    _record((a,), (out,), backward)
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat of an empty sequence")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    _record(tuple(parts), (out,), backward)
    return out


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("stack of an empty sequence")
    out = Tensor(np.stack([p.data for p in parts], axis=axis))

    def backward(g):
        slabs = np.split(g, len(parts), axis=axis)
        return tuple(np.squeeze(s, axis=axis) for s in slabs)

    _record(tuple(parts), (out,), backward)
    return out


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, shape).copy(),)

    _record((a,), (out,), backward)
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # stable in both tails
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = _sigmoid(np.atleast_1d(a.data)).reshape(a.shape)
    out = Tensor(y)
    _record((a,), (out,), lambda g: (g * y * (1.0 - y),))
    return out


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)
    _record((a,), (out,), lambda g: (g * (1.0 - y * y),))
    return out


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.maximum(a.data, 0.0)
    out = Tensor(y)
    mask = (a.data > 0.0).astype(np.float64)
    _record((a,), (out,), lambda g: (g * mask,))
    return out


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)
    out = Tensor(y)
    _record((a,), (out,), lambda g: (g * y,))
    return out


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.data))
    ad = a.data
    _record((a,), (out,), lambda g: (g / ad,))
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtraction stabilized softmax along one axis; preserves argmax."""
    a = _as_tensor(a)
    if a.size == 0 or a.ndim == 0:
        raise ValueError(f"softmax needs at least one element along an axis, got shape {a.shape}")
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    _record((a,), (out,), backward)
    return out


def logsumexp(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    y = m + np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True))
    full = y
    if not keepdims:
        y = np.squeeze(y, axis=axis) if axis is not None else y.reshape(())
    out = Tensor(y)
    soft = np.exp(a.data - full)

    def backward(g):
        ge = g
        if not keepdims:
            ge = np.expand_dims(g, axis) if axis is not None else np.asarray(g).reshape(full.shape)
        return (soft * ge,)

    _record((a,), (out,), backward)
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """w @ x + b for a vector x, or row-wise x @ w.T + b for a matrix of rows."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
        raise DimensionError(f"affine weights {w.shape} and bias {b.shape} do not conform")
    if x.ndim == 1:
        if w.shape[1] != x.shape[0]:
            raise DimensionError(f"affine: weight shape {w.shape} does not accept input shape {x.shape}")
        return add(matmul(w, x), b)
    if x.ndim == 2:
        if w.shape[1] != x.shape[1]:
            raise DimensionError(f"affine: weight shape {w.shape} does not accept input shape {x.shape}")
        return add(matmul(x, transpose(w)), b)
    raise DimensionError(f"affine input must have rank 1 or 2, got shape {x.shape}")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm scale/shift must be shape ({d},), got {gamma.shape} and {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)
    gd = gamma.data

    def backward(g):
        gxhat = g * gd
        term = gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        gx = term * inv
        axes = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=axes) if axes else g * xhat
        gbeta = g.sum(axis=axes) if axes else g.copy()
        return gx, ggamma, gbeta

    _record((x, gamma, beta), (out,), backward)
    return out


# ---------------------------------------------------------------------------
# LSTM primitives


@dataclass
class LstmCellParams:
    """One LSTM cell. Gate order along the first axis of w_x/w_h/b: i, f, g, o."""

    w_x: Tensor  # (4h, d)
    w_h: Tensor  # (4h, h)
    b: Tensor  # (4h,)

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[1]

    def named(self, prefix: str) -> dict:
        return {f"{prefix}.w_x": self.w_x, f"{prefix}.w_h": self.w_h, f"{prefix}.b": self.b}


@dataclass
class BiLstmParams:
    fw: LstmCellParams
    bw: LstmCellParams

    @property
    def hidden_size(self) -> int:
        return self.fw.hidden_size

    def named(self, prefix: str) -> dict:
        out = self.fw.named(f"{prefix}.fw")
        out.update(self.bw.named(f"{prefix}.bw"))
        return out


def init_lstm_cell(input_size: int, hidden_size: int, rng: np.random.Generator, scale: float = 0.1) -> LstmCellParams:
    return LstmCellParams(
        w_x=Tensor(rng.uniform(-scale, scale, (4 * hidden_size, input_size)), requires_grad=True),
        w_h=Tensor(rng.uniform(-scale, scale, (4 * hidden_size, hidden_size)), requires_grad=True),
        b=Tensor(np.zeros(4 * hidden_size), requires_grad=True),
    )


def init_bilstm(input_size: int, hidden_size: int, rng: np.random.Generator, scale: float = 0.1) -> BiLstmParams:
    return BiLstmParams(
        fw=init_lstm_cell(input_size, hidden_size, rng, scale),
        bw=init_lstm_cell(input_size, hidden_size, rng, scale),
    )


def lstm_step(x: Tensor, state: tuple, params: LstmCellParams) -> tuple:
    """Standard LSTM cell update, fused into a single tape node."""
    h, c = state
    x, h, c = _as_tensor(x), _as_tensor(h), _as_tensor(c)
    wx, wh, b = params.w_x, params.w_h, params.b
    hs = params.hidden_size
    if x.shape != (wx.shape[1],) or h.shape != (hs,) or c.shape != (hs,):
        raise DimensionError(
            f"lstm_step: input {x.shape}, state ({h.shape}, {c.shape}) do not match "
            f"weights {wx.shape}/{wh.shape}"
        )
    z = wx.data @ x.data + wh.data @ h.data + b.data
    i = _sigmoid(z[:hs])
    f = _sigmoid(z[hs : 2 * hs])
    g_ = np.tanh(z[2 * hs : 3 * hs])
    o = _sigmoid(z[3 * hs :])
    c_new = f * c.data + i * g_
    t = np.tanh(c_new)
    h_new = o * t
    h_out, c_out = Tensor(h_new), Tensor(c_new)
    xd, hd, cd = x.data, h.data, c.data
    wxd, whd = wx.data, wh.data

    def backward(gh, gc):
        dc = gc + gh * o * (1.0 - t * t)
        do = gh * t
        df = dc * cd
        dc_prev = dc * f
        di = dc * g_
        dg = dc * i
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g_ * g_), do * o * (1.0 - o)]
        )
        return (
            wxd.T @ dz,  # dx
            whd.T @ dz,  # dh
            dc_prev,
            np.outer(dz, xd),  # dw_x
            np.outer(dz, hd),  # dw_h
            dz,  # db
        )

    _record((x, h, c, wx, wh, b), (h_out, c_out), backward)
    return h_out, c_out


def bilstm_encode(xs: Sequence[Tensor], params: BiLstmParams) -> list:
    """Encode a sequence; output i is concat(forward state i, backward state i)."""
    xs = list(xs)
    if not xs:
        raise ValueError("bilstm_encode requires a non-empty sequence")
    hs = params.hidden_size
    zeros = lambda: (Tensor(np.zeros(hs)), Tensor(np.zeros(hs)))

    fwd = []
    state = zeros()
    for x in xs:
        state = lstm_step(x, state, params.fw)
        fwd.append(state[0])
    bwd = [None] * len(xs)
    state = zeros()
    for i in range(len(xs) - 1, -1, -1):
        state = lstm_step(xs[i], state, params.bw)
        bwd[i] = state[0]
    return [concat([f, b]) for f, b in zip(fwd, bwd)]


# ---------------------------------------------------------------------------
# gradient checking and the SGD update

ABS_FALLBACK_FLOOR = 1e-6
ABS_FALLBACK_TOL = 1e-7


@dataclass
class BlockCheck:
    name: str
    max_error: float
    passed: bool
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    blocks: dict

    @property
    def max_error(self) -> float:
        return max((b.max_error for b in self.blocks.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks.values())

    def summary(self) -> str:
        lines = [
            f"{name}: max_error={blk.max_error:.3e} {'ok' if blk.passed else 'FAIL'}"
            for name, blk in self.blocks.items()
        ]
        return "\n".join(lines)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare tape gradients against central finite differences per block.

    Elements whose analytic gradient magnitude is below ABS_FALLBACK_FLOOR
    are checked on absolute error against ABS_FALLBACK_TOL instead of the
    relative tolerance.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    with Tape() as tape:
        loss = loss_fn()
    if not np.isfinite(loss.data):
        raise FloatingPointError(f"non-finite loss {float(loss.data)} at the expansion point")
    tape.backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    blocks = {}
    for name, p in params.items():
        worst = (0.0, True, (), 0.0, 0.0)
        block_pass = True
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + step
            lp = float(loss_fn().data)
            p.data[idx] = orig - step
            lm = float(loss_fn().data)
            p.data[idx] = orig
            num = (lp - lm) / (2.0 * step)
            ana = float(analytic[name][idx])
            diff = abs(ana - num)
            if abs(ana) < ABS_FALLBACK_FLOOR:
                err = diff
                ok = diff <= ABS_FALLBACK_TOL
            else:
                err = diff / max(abs(ana), abs(num))
                ok = err < tolerance
            block_pass = block_pass and ok
            if err > worst[0]:
                worst = (err, ok, idx, ana, num)
        blocks[name] = BlockCheck(
            name=name,
            max_error=worst[0],
            passed=block_pass,
            worst_index=worst[2],
            analytic=worst[3],
            numeric=worst[4],
        )
    return GradCheckReport(blocks=blocks)


def sgd_step(params: dict, lr: float) -> None:
    """In-place gradient descent update over a dict of named parameter tensors."""
    for p in params.values():
        if p.grad is not None:
            p.data -= lr * p.grad
