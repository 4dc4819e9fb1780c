"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors hold 64-bit float data (row-major numpy arrays). Operations executed
inside a ``Tape`` context record backward rules in creation order, which is
topological by construction; ``backward`` replays them in reverse and
accumulates gradients additively, so fan-out just works.

Non-finite values (NaN/Inf) are rejected at every op boundary.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError

_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # a non-finite entry poisons the sum, so one reduction checks them all
        if not np.isfinite(arr.sum()):
            raise NumericError("tensor contains non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of operations; a context manager for one forward pass."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, object]] = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False


def _result(value, inputs, backward_fn) -> Tensor:
    """Wrap an op output, recording it on the active tape when needed."""
    out = Tensor(value)
    if _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE_TAPE.nodes.append((out, backward_fn))
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(loss: Tensor, tape: Tape):
    """Reverse sweep over the tape, seeding from a scalar loss."""
    if loss.data.size != 1:
        raise DimensionError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape.nodes):
        if out.grad is not None:
            fn(out.grad)


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were added or expanded by broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# binary elementwise ops (identical shapes, scalar, or numpy broadcast)
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def back(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def back(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _result(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(a.data * b.data, (a, b), back)


# ---------------------------------------------------------------------------
# unary elementwise ops
# ---------------------------------------------------------------------------

def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result(-a.data, (a,), lambda g: _accumulate(a, -g))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: _accumulate(a, g * (1.0 - y * y)))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # stable for large |x|
    y = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    return _result(y, (a,), lambda g: _accumulate(a, g * y * (1.0 - y)))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: _accumulate(a, g * mask))


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log of non-positive value")
    return _result(np.log(a.data), (a,), lambda g: _accumulate(a, g / a.data))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)
    if not np.all(np.isfinite(y)):
        raise NumericError("exp overflow")
    return _result(y, (a,), lambda g: _accumulate(a, g * y))


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: _accumulate(a, g * 2.0 * a.data))


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    # subgradient at 0 is 0
    s = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: _accumulate(a, g * s))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise NumericError("sqrt of negative value")
    y = np.sqrt(a.data)
    return _result(y, (a,), lambda g: _accumulate(a, g * 0.5 / np.maximum(y, 1e-300)))


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed stably; gradient is sigmoid(x)."""
    a = _as_tensor(a)
    y = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    sig = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                   np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    return _result(y, (a,), lambda g: _accumulate(a, g * sig))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul,
    "tanh": tanh, "sigmoid": sigmoid, "relu": relu,
    "log": log, "exp": exp, "square": square, "abs": absolute,
}


def elementwise(op_name: str, *operands) -> Tensor:
    """Name-dispatched elementwise op; binary ops accept equal shapes or a scalar."""
    if op_name not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op_name!r}")
    fn = _ELEMENTWISE[op_name]
    if op_name in ("add", "sub", "mul"):
        a, b = (_as_tensor(x) for x in operands)
        if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
            raise DimensionError(
                f"{op_name}: shapes {a.data.shape} and {b.data.shape} "
                "must match or one operand must be scalar")
        return fn(a, b)
    (a,) = operands
    return fn(a)


# ---------------------------------------------------------------------------
# linear algebra and structure ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")

    def back(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), back)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.data.shape
    return _result(a.data.reshape(shape), (a,),
                   lambda g: _accumulate(a, g.reshape(old)))


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,),
                   lambda g: _accumulate(a, np.transpose(g, inv)))


def getitem(a, idx) -> Tensor:
    a = _as_tensor(a)

    def back(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            _accumulate(a, buf)

    return _result(a.data[idx], (a,), back)


def gather_rows(table, ids) -> Tensor:
    """Rows table[ids]; gradient scatter-adds back (duplicate ids accumulate)."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if np.any(ids < 0) or np.any(ids >= table.data.shape[0]):
        raise DimensionError(
            f"gather_rows: index out of range for table with {table.data.shape[0]} rows")

    def back(g):
        if table.requires_grad:
            buf = np.zeros_like(table.data)
            np.add.at(buf, ids, g)
            _accumulate(table, buf)

    return _result(table.data[ids], (table,), back)


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of empty list")
    ref = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(s)) if i != axis):
            raise DimensionError(f"concat: non-axis extents differ: {ref} vs {s}")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis),
                   tensors, back)


def softmax(a, axis: int) -> Tensor:
    a = _as_tensor(a)
    if axis < 0 or axis >= a.data.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {a.data.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, y * (g - dot))

    return _result(y, (a,), back)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, shape).copy())

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def tmean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    return _result(a.data.mean(), (a,),
                   lambda g: _accumulate(a, np.broadcast_to(g / n, a.data.shape).copy()))


# ---------------------------------------------------------------------------
# convolutions (cross-correlation convention, no kernel flip)
# ---------------------------------------------------------------------------

def conv2d(x, kernels, stride: int = 1, padding: int = 0) -> Tensor:
    """x: C_in x H x W, kernels: C_out x C_in x kh x kw -> C_out x H' x W'."""
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise DimensionError("conv2d expects CxHxW input and OxCxKhxKw kernels")
    c_in, h, w = x.data.shape
    c_out, c_in2, kh, kw = kernels.data.shape
    if c_in != c_in2:
        raise DimensionError(f"conv2d: input channels {c_in} != kernel channels {c_in2}")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h_out <= 0 or w_out <= 0 or kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            f"conv2d: non-positive output extent for input {x.data.shape}, "
            f"kernel {kernels.data.shape}, stride {stride}, padding {padding}")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]                      # C_in x H' x W' x kh x kw
    cols = win.transpose(1, 2, 0, 3, 4).reshape(h_out * w_out, c_in * kh * kw)
    kmat = kernels.data.reshape(c_out, c_in * kh * kw)
    out = (cols @ kmat.T).T.reshape(c_out, h_out, w_out)

    def back(g):
        gmat = g.reshape(c_out, h_out * w_out)            # C_out x (H'W')
        if kernels.requires_grad:
            _accumulate(kernels, (gmat @ cols).reshape(kernels.data.shape))
        if x.requires_grad:
            dcols = gmat.T @ kmat                         # (H'W') x (C_in kh kw)
            dwin = dcols.reshape(h_out, w_out, c_in, kh, kw).transpose(2, 0, 1, 3, 4)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * h_out:stride,
                        j:j + stride * w_out:stride] += dwin[:, :, :, i, j]
            if padding:
                dxp = dxp[:, padding:-padding, padding:-padding]
            _accumulate(x, dxp)

    return _result(out, (x, kernels), back)


def conv1d_seq(x, kernels, padding: int = 0) -> Tensor:
    """Sequence conv: x is L x C_in, kernels C_out x C_in x kw -> L' x C_out."""
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    img = reshape(transpose(x, (1, 0)), (x.data.shape[1], x.data.shape[0], 1))
    k4 = reshape(kernels, kernels.data.shape + (1,))
    if padding:
        zpad = Tensor(np.zeros((img.data.shape[0], padding, 1)))
        img = concat([zpad, img, zpad], axis=1)
    out = conv2d(img, k4, stride=1, padding=0)
    return transpose(reshape(out, (out.data.shape[0], out.data.shape[1])), (1, 0))


# ---------------------------------------------------------------------------
# fused ops for the training hot path
# ---------------------------------------------------------------------------

def affine(x, w, b) -> Tensor:
    """x @ w + b in one tape node; b broadcasts over rows."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise DimensionError(f"affine: incompatible shapes {x.data.shape} x {w.data.shape}")

    def back(g):
        _accumulate(x, g @ w.data.T)
        _accumulate(w, x.data.T @ g)
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(x.data @ w.data + b.data, (x, w, b), back)


# ---------------------------------------------------------------------------
# recurrent cell
# ---------------------------------------------------------------------------

def recurrent_step(x, state, params) -> tuple[Tensor, Tensor]:
    """One LSTM cell step on row vectors.

    x: 1 x D_x, state: (h, c) each 1 x H. params holds "w_x" (D_x x 4H),
    "w_h" (H x 4H), "b" (1 x 4H), gate order input/forget/cell/output.
    Fused into a single tape node with an analytic backward rule;
    differentiable through both outputs.
    """
    h, c = state
    w_x, w_h, b = params["w_x"], params["w_h"], params["b"]
    hidden = w_h.data.shape[0]
    if x.data.shape != (1, w_x.data.shape[0]) or h.data.shape != (1, hidden) \
            or c.data.shape != (1, hidden) or w_x.data.shape[1] != 4 * hidden:
        raise DimensionError(
            f"recurrent_step: inconsistent shapes x={x.data.shape} h={h.data.shape} "
            f"c={c.data.shape} w_x={w_x.data.shape} w_h={w_h.data.shape}")

    z = x.data @ w_x.data + h.data @ w_h.data + b.data
    zi, zf, zg, zo = (z[:, k * hidden:(k + 1) * hidden] for k in range(4))
    i = 1.0 / (1.0 + np.exp(-zi))
    f = 1.0 / (1.0 + np.exp(-zf))
    g_ = np.tanh(zg)
    o = 1.0 / (1.0 + np.exp(-zo))
    c_val = f * c.data + i * g_
    tc = np.tanh(c_val)
    h_val = o * tc

    c_new = Tensor(c_val)
    h_new = Tensor(h_val)

    fired = [False]

    def back_joint(dh, dc):
        do = dh * tc
        dcell = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dcell * g_ * i * (1.0 - i),
            dcell * c.data * f * (1.0 - f),
            dcell * i * (1.0 - g_ * g_),
            do * o * (1.0 - o)], axis=1)
        _accumulate(x, dz @ w_x.data.T)
        _accumulate(h, dz @ w_h.data.T)
        _accumulate(c, dcell * f)
        _accumulate(w_x, x.data.T @ dz)
        _accumulate(w_h, h.data.T @ dz)
        _accumulate(b, dz)

    def back_h(dh):
        fired[0] = True
        back_joint(dh, c_new.grad if c_new.grad is not None else 0.0)

    def back_c(dc):
        # runs only when h_new was never consumed
        if not fired[0]:
            back_joint(0.0, dc)

    if _ACTIVE_TAPE is not None and any(
            t.requires_grad for t in (x, h, c, w_x, w_h, b)):
        h_new.requires_grad = True
        c_new.requires_grad = True
        # both outputs precede every consumer on the tape; the reverse sweep
        # reaches back_h first with both grads fully accumulated
        _ACTIVE_TAPE.nodes.append((c_new, back_c))
        _ACTIVE_TAPE.nodes.append((h_new, back_h))
    return h_new, c_new
