"""Minimal reverse-mode differentiation on numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output cotangent to one cotangent per parent. Calling
:func:`backward` on a scalar sorts the recorded graph topologically (the
tape), runs the closures in reverse and accumulates ``.grad`` on leaf
tensors. A graph can be differentiated once; its closures are released
afterwards.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
import scipy.special

from .errors import NumericError, ShapeError

_GRAD_ENABLED = True
_CHECKED = False


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def checked(enabled: bool = True):
    """Raise NumericError as soon as any op produces a non-finite value."""
    global _CHECKED
    prev = _CHECKED
    _CHECKED = enabled
    try:
        yield
    finally:
        _CHECKED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = None
        self._parents: tuple = ()
        self._backward = None
        self._consumed = False

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self):
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __float__(self):
        return float(self.data)

    def __len__(self):
        return len(self.data)

    def zero_grad(self):
        self.grad = None

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None:
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(x)


def _coerce(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, a)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, b), b
    return as_tensor(a), as_tensor(b)


def _make(op: str, data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _CHECKED and not np.all(np.isfinite(out.data)):
        raise NumericError(f"non-finite output from op '{op}'")
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf needing it."""
    if grad is None and loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("graph already differentiated; rebuild the forward pass")
    if not loss.requires_grad:
        return
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype)
    grads = {id(loss): seed}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if not node._consumed:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
        node._backward = None
        node._parents = ()
        node._consumed = True


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = _coerce(a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _coerce(a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _coerce(a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _coerce(a, b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make("div", out, (a, b), bw)


def neg(a):
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def power(a, exponent: float):
    a = as_tensor(a)
    if exponent == 2:
        return _make("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))
    return _make("pow", a.data**exponent, (a,),
                 lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sin(a):
    a = as_tensor(a)
    return _make("sin", np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = scipy.special.expit(a.data)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def xlogx(a):
    """x*log(x) with 0*log(0) = 0 (gradient taken as 0 there)."""
    a = as_tensor(a)
    x = a.data
    pos = x > 0
    safe = np.where(pos, x, 1.0)
    out = np.where(pos, x * np.log(safe), 0.0)
    return _make("xlogx", out, (a,), lambda g: (np.where(pos, g * (np.log(safe) + 1.0), 0.0),))


def lgamma(a):
    a = as_tensor(a)
    return _make("lgamma", scipy.special.gammaln(a.data), (a,),
                 lambda g: (g * scipy.special.digamma(a.data),))


def digamma(a):
    a = as_tensor(a)
    return _make("digamma", scipy.special.digamma(a.data), (a,),
                 lambda g: (g * scipy.special.polygamma(1, a.data),))


def clip(a, lo: float, hi: float):
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def cumsum(a, axis=-1):
    a = as_tensor(a)
    return _make("cumsum", np.cumsum(a.data, axis=axis), (a,),
                 lambda g: (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),))


def reshape(a, shape):
    a = as_tensor(a)
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)
    return _make("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i, j):
    axes = list(range(as_tensor(a).ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def index(a, idx):
    a = as_tensor(a)
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make("index", a.data[idx], (a,), bw)


def gather(a, indices, axis=0):
    """Select slices along ``axis`` (like np.take); repeated indices accumulate."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim

    def bw(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _make("gather", np.take(a.data, indices, axis=axis), (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    return _make("stack", np.stack([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


# ---------------------------------------------------------------------------
# Linear algebra and normalizations
# ---------------------------------------------------------------------------


def matmul(a, b):
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("matmul", a.data @ b.data, (a, b), bw)


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make("softmax", out, (a,),
                 lambda g: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),))


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    return _make("log_softmax", out, (a,),
                 lambda g: (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),))


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------


def conv1d(x, w, b=None, dilation: int = 1):
    """Causal dilated convolution.

    x: (B, C_in, T), w: (C_out, C_in, K), b: (C_out,) -> (B, C_out, T).
    Output t sees inputs t - (K-1-k)*dilation for k = 0..K-1 (left zero pad).
    """
    x, w = _coerce(x, w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes x{x.shape} w{w.shape}")
    c_out, _, k = w.shape
    length = x.shape[2]
    pad = (k - 1) * dilation
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, 0))) if pad else x.data
    out = np.zeros((x.shape[0], c_out, length), dtype=np.result_type(x.data, w.data))
    # one contiguous (C_out, C_in) matrix per tap keeps matmul on the BLAS path
    taps = np.ascontiguousarray(np.moveaxis(w.data, 2, 0))
    for j in range(k):
        out += taps[j] @ xp[:, :, j * dilation : j * dilation + length]
    parents = [x, w]
    if b is not None:
        b = as_tensor(b, w)
        out += b.data[None, :, None]
        parents.append(b)

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        for j in range(k):
            sl = slice(j * dilation, j * dilation + length)
            gxp[:, :, sl] += taps[j].T @ g
            gw[:, :, j] = np.tensordot(g, xp[:, :, sl], axes=([0, 2], [0, 2]))
        grads = [gxp[:, :, pad:], gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _make("conv1d", out, parents, bw)


def conv_transpose1d(x, w, b=None, stride: int = 1):
    """Transposed convolution cropped symmetrically to exactly stride * length.

    x: (B, C_in, S), w: (C_in, C_out, K) -> (B, C_out, stride*S).
    The uncropped length (S-1)*stride + K loses (K-stride)//2 samples at the
    front and the rest at the back.
    """
    x, w = _coerce(x, w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv_transpose1d: incompatible shapes x{x.shape} w{w.shape}")
    if w.shape[2] < stride:
        raise ShapeError("conv_transpose1d: kernel shorter than stride")
    batch, c_in, s = x.shape
    _, c_out, k = w.shape
    full_len = (s - 1) * stride + k
    left = (k - stride) // 2
    out_len = stride * s
    wm = w.data.reshape(c_in, c_out * k)
    # (B, S, C_out*K): contribution of each input frame to each kernel tap
    y = np.swapaxes(x.data, 1, 2) @ wm
    y = y.reshape(batch, s, c_out, k)
    full = np.zeros((batch, c_out, full_len), dtype=y.dtype)
    for j in range(k):
        full[:, :, j : j + stride * (s - 1) + 1 : stride] += np.swapaxes(y[:, :, :, j], 1, 2)
    out = full[:, :, left : left + out_len].copy()
    parents = [x, w]
    if b is not None:
        b = as_tensor(b, w)
        out += b.data[None, :, None]
        parents.append(b)

    def bw(g):
        gfull = np.zeros((batch, c_out, full_len), dtype=g.dtype)
        gfull[:, :, left : left + out_len] = g
        gy = np.empty((batch, s, c_out, k), dtype=g.dtype)
        for j in range(k):
            gy[:, :, :, j] = np.swapaxes(gfull[:, :, j : j + stride * (s - 1) + 1 : stride], 1, 2)
        gy = gy.reshape(batch, s, c_out * k)
        gx = np.swapaxes(gy @ wm.T, 1, 2)
        gw = np.tensordot(x.data, gy, axes=([0, 2], [0, 1])).reshape(w.shape)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _make("conv_transpose1d", out, parents, bw)


# ---------------------------------------------------------------------------
# Recurrent cell
# ---------------------------------------------------------------------------


def lstm_cell(x, h, c, w_ih, w_hh, bias):
    """One LSTM step, composed from primitive ops; gate order i, f, g, o.

    x: (B, I), h/c: (B, H), w_ih: (4H, I), w_hh: (4H, H), bias: (4H,).
    Returns (h_new, c_new).
    """
    gates = matmul(x, transpose(w_ih)) + matmul(h, transpose(w_hh)) + bias
    return lstm_gates(gates, c)


def lstm_gates(gates, c):
    """Finish an LSTM step from precomputed pre-activations (B, 4H)."""
    hidden = gates.shape[-1] // 4
    i = sigmoid(gates[..., 0:hidden])
    f = sigmoid(gates[..., hidden : 2 * hidden])
    g = tanh(gates[..., 2 * hidden : 3 * hidden])
    o = sigmoid(gates[..., 3 * hidden :])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, c_new


# ---------------------------------------------------------------------------
# Spectral power
# ---------------------------------------------------------------------------


def rfft_power(x, frame_length: int, stride: int, n_fft: int, window: np.ndarray | None = None):
    """|DFT|^2 of windowed frames. x: (..., T) -> (..., L, n_fft//2 + 1).

    The backward pass applies the adjoint of the (linear) zero-padded DFT,
    computed with an inverse real FFT, after the local |.|^2 rule.
    """
    x = as_tensor(x)
    if window is None:
        window = np.ones(frame_length)
    window = np.asarray(window, dtype=x.dtype)
    t = x.shape[-1]
    if t < frame_length:
        raise ShapeError(f"rfft_power: signal length {t} < frame length {frame_length}")
    n_frames = (t - frame_length) // stride + 1
    frames = np.lib.stride_tricks.sliding_window_view(x.data, frame_length, axis=-1)
    frames = frames[..., ::stride, :][..., :n_frames, :] * window
    spec = np.fft.rfft(frames, n=n_fft, axis=-1)
    out = (spec.real**2 + spec.imag**2).astype(x.dtype)
    n_bins = n_fft // 2 + 1

    def bw(g):
        # d|X|^2 = 2 Re(conj(X) dX); pull back through X = F w x.
        coeff = 2.0 * g * spec
        coeff[..., 1 : n_bins - (1 if n_fft % 2 == 0 else 0)] *= 0.5
        gframes = n_fft * np.fft.irfft(coeff, n=n_fft, axis=-1)[..., :frame_length] * window
        gx = np.zeros(x.shape, dtype=x.dtype)
        for l in range(n_frames):
            gx[..., l * stride : l * stride + frame_length] += gframes[..., l, :]
        return (gx,)

    return _make("rfft_power", out, (x,), bw)


# ---------------------------------------------------------------------------
# Finite-difference checking
# ---------------------------------------------------------------------------


def gradient_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    n_probe: int = 32,
    h: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-7,
    order: int = 2,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn`` maps Tensors (one per entry of ``inputs``) to a Tensor. Non-scalar
    outputs are contracted with a fixed random cotangent. For every input,
    ``n_probe`` random coordinates (all of them if fewer) are perturbed by
    +-h. The relative error of a coordinate is |ad - fd| / max(|ad|, |fd|, floor).
    ``order=4`` uses the five-point stencil, whose truncation error falls as h**4.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    rng = np.random.default_rng(seed)
    inputs = [np.array(v, dtype=np.float64) for v in inputs]

    probe_out = fn(*[Tensor(v) for v in inputs])
    cot = rng.standard_normal(probe_out.shape) if probe_out.data.size != 1 else None

    def scalar(vals, track):
        ts = [Tensor(v, requires_grad=track) for v in vals]
        out = fn(*ts)
        if cot is not None:
            out = tsum(out * cot)
        return out, ts

    loss, ts = scalar(inputs, True)
    backward(loss)
    worst = 0.0
    for n, v in enumerate(inputs):
        analytic = ts[n].grad if ts[n].grad is not None else np.zeros_like(v)
        coords = np.arange(v.size)
        if v.size > n_probe:
            coords = rng.choice(v.size, size=n_probe, replace=False)
        for flat in coords:
            pos = np.unravel_index(flat, v.shape) if v.ndim else ()

            def at(step):
                shifted = [a.copy() for a in inputs]
                shifted[n][pos] += step
                with no_grad():
                    return float(scalar(shifted, False)[0].data)

            numeric = (at(h) - at(-h)) / (2 * h)
            if order == 4:
                numeric = (4 * numeric - (at(2 * h) - at(-2 * h)) / (4 * h)) / 3
            a = float(analytic[pos])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
