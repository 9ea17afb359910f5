"""Dense float32 tensors with reverse-mode automatic differentiation.

Kernels are plain numpy calls recorded on a tape of backward closures.
backward() replays the tape in reverse execution order and accumulates
gradients additively into every tensor that requires them. There is no
GPU path and no mixed precision; leading dimensions of most kernels act
as plain batch dimensions.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor", "Parameter", "Adam", "TensorError", "ShapeError",
    "NumericError", "GraphError", "no_grad", "is_grad_enabled",
    "matmul", "add", "sub", "mul", "scale", "neg", "exp",
    "tensor_sum", "mean", "sum_axis", "mean_axis",
    "layer_norm", "softmax_lastdim", "logsoftmax_lastdim", "gelu",
    "causal_conv1d", "causal_conv1d_output_len", "attention",
    "multi_head_attention", "reshape", "swapaxes", "concat",
    "embedding_lookup", "getitem", "set_debug_checks",
]


class TensorError(Exception):
    """Base class for tensor-engine failures."""


class ShapeError(TensorError):
    """Operands are not conformable; message names the op and shapes."""


class NumericError(TensorError):
    """An op produced non-finite values."""


class GraphError(TensorError):
    """Misuse of the autodiff tape (non-scalar backward, reuse, ...)."""


_grad_enabled = True
_debug_checks = False


def set_debug_checks(flag: bool) -> None:
    """Enable per-op finiteness checks (slow; meant for tests)."""
    global _debug_checks
    _debug_checks = bool(flag)


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad():
    """Suspend tape recording; ops inside produce detached tensors."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_f32(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    return arr


class Tensor:
    """A float32 array plus an optional gradient buffer and tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f32(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._backward = None
        self._parents: tuple = ()
        self._consumed = False

    # -- introspection -------------------------------------------------

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
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has {self.data.size} elements")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- autodiff ------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        self must be a scalar produced under an active tape; the tape is
        consumed (a second call on the same graph raises GraphError).
        """
        if self.size != 1:
            raise GraphError(f"backward: loss must be scalar, got shape {self.shape}")
        if self._consumed:
            raise GraphError("backward: graph already consumed")
        if not np.isfinite(self.data).all():
            raise NumericError("backward: loss is not finite")

        # Iterative post-order: children enter topo before their consumers.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            if node._consumed:
                raise GraphError("backward: graph already consumed")
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # Consume the tape; only leaves keep their gradient buffers.
        for node in topo:
            interior = node._backward is not None
            node._backward = None
            node._parents = ()
            if interior:
                node.grad = None
                node._consumed = True
        self._consumed = True


def Parameter(data) -> Tensor:
    """A learnable leaf tensor."""
    return Tensor(data, requires_grad=True)


# -- tape plumbing -----------------------------------------------------


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(np.float32, copy=True) if g.dtype != np.float32 else g.copy()
    else:
        t.grad = t.grad + g


def _make(data: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    if _debug_checks and not np.isfinite(data).all():
        raise NumericError(f"{op}: produced non-finite values")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents
        out._backward = backward
    return out


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` following numpy broadcasting rules."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise and linear kernels -------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} not broadcastable")

    def backward(g):
        if a.requires_grad or a._parents:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad or b._parents:
            _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} not broadcastable")

    def backward(g):
        if a.requires_grad or a._parents:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad or b._parents:
            _accum(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} not broadcastable")

    def backward(g):
        if a.requires_grad or a._parents:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad or b._parents:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward, "mul")


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        _accum(a, -g)

    return _make(-a.data, (a,), backward, "neg")


def scale(a, s: float) -> Tensor:
    """Multiply by a python scalar (not a learnable quantity)."""
    a = _wrap(a)
    s = float(s)

    def backward(g):
        _accum(a, g * s)

    return _make(a.data * s, (a,), backward, "scale")


def exp(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)

    def backward(g):
        _accum(a, g * data)

    return _make(data, (a,), backward, "exp")


def log(a) -> Tensor:
    a = _wrap(a)
    if (a.data <= 0.0).any():
        raise NumericError("log: non-positive input")
    data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make(data, (a,), backward, "log")


def matmul(a, b) -> Tensor:
    """Matrix product; leading dims are batch dims with numpy semantics."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(f"matmul: need matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad or a._parents:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad or b._parents:
            if b.ndim == 2 and a.ndim > 2:
                # batched activations against a shared weight: one GEMM
                # instead of a batched product plus a reduction
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                _accum(b, gb)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                _accum(b, _unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward, "matmul")


# -- reductions ---------------------------------------------------------


def tensor_sum(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _make(np.asarray(a.data.sum(dtype=np.float32)), (a,), backward, "sum")


def mean(a) -> Tensor:
    a = _wrap(a)
    n = a.size

    def backward(g):
        _accum(a, np.broadcast_to(g / n, a.shape).copy())

    return _make(np.asarray(a.data.mean(dtype=np.float32)), (a,), backward, "mean")


def sum_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float32)

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg, a.shape).copy())

    return _make(data, (a,), backward, "sum_axis")


def mean_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    n = a.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float32)

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg / n, a.shape).copy())

    return _make(data, (a,), backward, "mean_axis")


# -- normalization / activations ----------------------------------------


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last dim to zero mean / unit variance, then affine."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs last dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True, dtype=np.float32)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True, dtype=np.float32)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad or gain._parents:
            _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad or bias._parents:
            _accum(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad or x._parents:
            dxhat = g * gain.data
            s1 = dxhat.sum(axis=-1, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
            _accum(x, (inv / d) * (d * dxhat - s1 - xhat * s2))

    return _make(data, (x, gain, bias), backward, "layer_norm")


def softmax_lastdim(x) -> Tensor:
    x = _wrap(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        _accum(x, s * (g - dot))

    return _make(s, (x,), backward, "softmax")


def logsoftmax_lastdim(x) -> Tensor:
    x = _wrap(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    data = z - lse
    s = np.exp(data)

    def backward(g):
        _accum(x, g - s * g.sum(axis=-1, keepdims=True))

    return _make(data, (x,), backward, "logsoftmax")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = _wrap(x)
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    data = (x.data * phi).astype(np.float32)

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        _accum(x, g * (phi + x.data * pdf))

    return _make(data, (x,), backward, "gelu")


# -- shape ops ----------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}")

    def backward(g):
        _accum(a, g.reshape(old))

    return _make(data, (a,), backward, "reshape")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _wrap(a)

    def backward(g):
        _accum(a, np.swapaxes(g, ax1, ax2))

    return _make(np.swapaxes(a.data, ax1, ax2).copy(), (a,), backward, "swapaxes")


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def backward(g):
        off = 0
        for t, n in zip(ts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(off, off + n)
            if t.requires_grad or t._parents:
                _accum(t, g[tuple(sl)])
            off += n

    return _make(data, tuple(ts), backward, "concat")


def getitem(a, idx) -> Tensor:
    """Basic slicing; gradient scatters back into a zero buffer."""
    a = _wrap(a)
    data = a.data[idx]

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        _accum(a, buf)

    return _make(np.ascontiguousarray(data), (a,), backward, "getitem")


def embedding_lookup(table, ids) -> Tensor:
    """Row gather from a [vocab, width] table; ids is an int array."""
    table = _wrap(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_lookup: index out of range for table {table.shape}")
    data = table.data[ids]

    def backward(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        _accum(table, buf)

    return _make(data, (table,), backward, "embedding")


# -- sequence kernels ---------------------------------------------------


def repeat_rows(a, k: int) -> Tensor:
    """Repeat each row along the time axis (second-to-last dim) k times."""
    a = _wrap(a)
    if a.ndim < 2:
        raise ShapeError(f"repeat_rows: need at least 2 dims, got {a.shape}")
    data = np.repeat(a.data, k, axis=-2)
    t = a.shape[-2]

    def backward(g):
        shape = g.shape[:-2] + (t, k, g.shape[-1])
        _accum(a, g.reshape(shape).sum(axis=-2))

    return _make(data, (a,), backward, "repeat_rows")


def causal_conv1d_output_len(t: int, stride: int) -> int:
    return (t - 1) // stride + 1


def causal_conv1d(x, kernels, stride: int = 1) -> Tensor:
    """Causal 1D convolution over the time axis.

    x: [..., T, C_in]; kernels: [K, C_in, C_out]. The input is left-padded
    by (K-1) zeros so output index i reads input indices <= i*stride.
    Output length is ceil(T / stride).
    """
    x, kernels = _wrap(x), _wrap(kernels)
    if x.ndim < 2 or kernels.ndim != 3:
        raise ShapeError(f"causal_conv1d: x {x.shape}, kernels {kernels.shape}")
    k, cin, cout = kernels.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"causal_conv1d: channels {x.shape[-1]} vs kernel {cin}")
    t = x.shape[-2]
    if t < 1:
        raise ShapeError("causal_conv1d: empty time axis")
    tout = causal_conv1d_output_len(t, stride)

    pad = [(0, 0)] * x.ndim
    pad[-2] = (k - 1, 0)
    xp = np.pad(x.data, pad)
    # windows[..., i, kk, :] = xp[..., i*stride + kk, :]
    idx = (np.arange(tout)[:, None] * stride + np.arange(k)[None, :])
    win = xp[..., idx, :]                      # [..., tout, K, cin]
    wmat = kernels.data.reshape(k * cin, cout)
    out_shape = win.shape[:-2] + (cout,)
    data = (win.reshape(-1, k * cin) @ wmat).reshape(out_shape)

    def backward(g):
        gflat = g.reshape(-1, cout)
        if kernels.requires_grad or kernels._parents:
            gk = win.reshape(-1, k * cin).T @ gflat
            _accum(kernels, gk.reshape(k, cin, cout))
        if x.requires_grad or x._parents:
            gwin = (gflat @ wmat.T).reshape(win.shape)
            gxp = np.zeros_like(xp)
            for kk in range(k):
                gxp[..., kk:kk + stride * tout:stride, :] += gwin[..., :, kk, :]
            sl = [slice(None)] * x.ndim
            sl[-2] = slice(k - 1, None)
            _accum(x, gxp[tuple(sl)])

    return _make(data, (x, kernels), backward, "causal_conv1d")


def attention(q, k, v, n_heads: int, mask=None) -> Tensor:
    """Scaled dot-product attention with head splitting.

    q: [..., Tq, D], k/v: [..., Tk, D]; mask is an optional additive array
    broadcastable to [..., n_heads, Tq, Tk] (use large negatives to forbid).
    Composed from primitive kernels, so gradients come from the tape.
    """
    q, k, v = _wrap(q), _wrap(k), _wrap(v)
    d = q.shape[-1]
    if d % n_heads != 0:
        raise ShapeError(f"attention: width {d} not divisible by {n_heads} heads")
    if k.shape[-1] != d or v.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    dh = d // n_heads
    tq, tk = q.shape[-2], k.shape[-2]
    batch = q.shape[:-2]

    def split(x, t):
        x = reshape(x, batch + (t, n_heads, dh))
        return swapaxes(x, -2, -3)             # [..., H, T, dh]

    qh, kh, vh = split(q, tq), split(k, tk), split(v, tk)
    scores = scale(matmul(qh, swapaxes(kh, -1, -2)), 1.0 / math.sqrt(dh))
    if mask is not None:
        mask_arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask, np.float32)
        scores = add(scores, Tensor(mask_arr))
    w = softmax_lastdim(scores)
    out = matmul(w, vh)                        # [..., H, Tq, dh]
    out = swapaxes(out, -2, -3)
    return reshape(out, batch + (tq, d))


def multi_head_attention(q_src, kv_src, n_heads: int, mask=None) -> Tensor:
    """Attention where keys and values both come from kv_src."""
    return attention(q_src, kv_src, kv_src, n_heads, mask)


def causal_mask(t: int) -> np.ndarray:
    """Additive [t, t] mask forbidding attention to future positions."""
    m = np.zeros((t, t), dtype=np.float32)
    m[np.triu_indices(t, k=1)] = -1e9
    return m


# -- optimizer ----------------------------------------------------------


class Adam:
    """Adam with bias correction, optional linear warmup and grad clipping.

    Parameters are a name -> Tensor mapping; step() consumes .grad buffers
    and zeroes them afterwards.
    """

    def __init__(self, params: dict, lr: float = 2e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, warmup: int = 0, clip_norm: float | None = 1.0):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.warmup = int(warmup)
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def _global_norm(self) -> float:
        sq = 0.0
        for p in self.params.values():
            sq += float(np.square(p.grad, dtype=np.float64).sum())
        return math.sqrt(sq)

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise GraphError(f"adam: missing gradient for parameter '{name}'")
        self.t += 1
        lr = self.lr
        if self.warmup > 0:
            lr *= min(1.0, self.t / self.warmup)
        if self.clip_norm is not None:
            gn = self._global_norm()
            if gn > self.clip_norm:
                s = self.clip_norm / (gn + 1e-12)
                for p in self.params.values():
                    p.grad = p.grad * np.float32(s)
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / b1c
            vhat = v / b2c
            p.data = p.data - np.float32(lr) * mhat / (np.sqrt(vhat) + self.eps)
            p.grad = None


def adam_step(params: dict, state: Adam) -> None:
    """Functional alias: apply one Adam update to `params` via `state`."""
    if state.params is not params and set(state.params) != set(params):
        raise GraphError("adam_step: state was built for different parameters")
    state.step()
