"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every primitive records its inputs and a closure computing input gradients
from the output gradient. ``backward`` walks the recorded graph in reverse
topological order and accumulates into leaf tensors that require grad.

Broadcasting is deliberately restricted to scalar-with-tensor; use
:func:`broadcast_to` when a bias must be spread over rows.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()


def _dtype():
    return getattr(_state, "dtype", np.float32)


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype used for new tensors (e.g. ``np.float64`` for oracle tests)."""
    prev = _dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = np.array(data, dtype=dtype or _dtype())
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def has_fault(self) -> bool:
        """True when the data holds NaN or Inf."""
        return not bool(np.all(np.isfinite(self.data)))

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_nonscalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, only: Iterable["Tensor"] | None = None) -> None:
        backward(self, only=only)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a python scalar")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def _raise_nonscalar(t: Tensor):
    raise ShapeError(f"item: expected a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        s = b
        return _make(a.data + np.asarray(s, a.dtype), (a,), lambda g: (g,), "add")
    if a.ndim == 0 or b.ndim == 0:
        if a.ndim == 0 and b.ndim != 0:
            a, b = b, a
        return _make(a.data + b.data, (a, b), lambda g: (g, np.sum(g)), "add")
    _check_same("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)) if isinstance(b, Tensor) else -b)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        s = np.asarray(b, a.dtype)
        return _make(a.data * s, (a,), lambda g: (g * s,), "mul")
    if a.ndim == 0 or b.ndim == 0:
        if a.ndim == 0 and b.ndim != 0:
            a, b = b, a
        ad, bd = a.data, b.data
        return _make(ad * bd, (a, b), lambda g: (g * bd, np.sum(g * ad)), "mul")
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1 - y),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1 - y * y),), "tanh")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    # np.maximum keeps NaN visible instead of mapping it to 0
    return _make(np.maximum(a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,), "relu")


def abs_(a: Tensor) -> Tensor:
    sgn = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sgn,), "abs")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    lse = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    y = x - lse

    def bw(g):
        p = np.exp(y)
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _make(y, (a,), bw, "log_softmax")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def conv1d(x: Tensor, w: Tensor, stride: int = 1, pad_left: int | None = None) -> Tensor:
    """Time convolution on a T x B x C_in input with a width x C_in x C_out kernel.

    Padding is fixed on the left (``(width - 1) // 2`` by default) and the right
    side is zero-filled as needed, giving ``ceil(T / stride)`` output frames.
    The fixed left pad makes each utterance's output independent of how much
    padding its batch carries.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeError(f"conv1d: shape mismatch {x.shape} vs {w.shape}")
    if stride < 1:
        raise ValueError("conv1d: stride must be >= 1")
    T, B, C = x.shape
    width, _, cout = w.shape
    pl = (width - 1) // 2 if pad_left is None else pad_left
    t_out = -(-T // stride)
    total = (t_out - 1) * stride + width
    pr = max(total - T - pl, 0)
    xp = np.zeros((T + pl + pr, B, C), dtype=x.dtype)
    xp[pl : pl + T] = x.data
    idx = np.arange(t_out)[:, None] * stride + np.arange(width)[None, :]
    cols = xp[idx]  # t_out, width, B, C
    cols2 = cols.transpose(0, 2, 1, 3).reshape(t_out * B, width * C)
    wd = w.data
    w2 = wd.reshape(width * C, cout)
    y = (cols2 @ w2).reshape(t_out, B, cout)

    def bw(g):
        g2 = g.reshape(t_out * B, cout)
        gw = (cols2.T @ g2).reshape(wd.shape)
        gcols = (g2 @ w2.T).reshape(t_out, B, width, C).transpose(0, 2, 1, 3)
        gxp = np.zeros_like(xp)
        np.add.at(gxp, idx, gcols)
        return gxp[pl : pl + T], gw

    return _make(y, (x, w), bw, "conv1d")


# ---------------------------------------------------------------- shape ops


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from exc
    return _make(y, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicitly repeat ``a`` along new leading axes (a bias of shape F to ... x F)."""
    shape = tuple(shape)
    if shape[len(shape) - a.ndim :] != a.shape:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}")
    lead = tuple(range(len(shape) - a.ndim))
    y = np.broadcast_to(a.data, shape).copy()
    return _make(y, (a,), lambda g: (g.sum(axis=lead) if lead else g,), "broadcast_to")


def slice_(a: Tensor, index) -> Tensor:
    y = a.data[index]
    shape, dt = a.shape, a.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dt)
        if _is_fancy(index):
            np.add.at(out, index, g)
        else:
            out[index] += g
        return (out,)

    return _make(np.array(y), (a,), bw, "slice")


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def permute_time(a: Tensor, index: np.ndarray) -> Tensor:
    """Reorder frames per batch column: ``y[t, b] = a[index[t, b], b]``.

    Each column of ``index`` must be a permutation of ``range(T)``.
    """
    T, B = index.shape
    cols = np.broadcast_to(np.arange(B), (T, B))
    y = a.data[index, cols]
    shape, dt = a.shape, a.dtype

    def bw(g):
        out = np.empty(shape, dtype=dt)
        out[index, cols] = g
        return (out,)

    return _make(y, (a,), bw, "permute_time")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ShapeError(f"concat: shape mismatch {ref.shape} vs {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    y = np.mean(a.data, axis=axis)
    shape = a.shape

    def bw(g):
        gg = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, shape).astype(a.dtype),)

    return _make(np.asarray(y, a.dtype), (a,), bw, "reduce_mean")


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    y = np.sum(a.data, axis=axis)
    shape = a.shape

    def bw(g):
        gg = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).astype(a.dtype),)

    return _make(np.asarray(y, a.dtype), (a,), bw, "reduce_sum")


# ---------------------------------------------------------------- fused layers


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` applied to the last axis of an arbitrary-rank input."""
    lead = x.shape[:-1]
    x2 = reshape(x, (-1, x.shape[-1]))
    y = matmul(x2, w)
    if b is not None:
        y = add(y, broadcast_to(b, y.shape))
    return reshape(y, lead + (w.shape[1],))


def lstm_sequence(x: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM over a T x B x I input from a zero state, returning T x B x H.

    Gate order in the 4H axis is (input, forget, candidate, output). This is a
    fused primitive with hand-written backpropagation through time; it matches
    repeated :func:`lstm_step` calls exactly.
    """
    T, B, I = x.shape
    H = w_h.shape[0]
    if w_x.shape != (I, 4 * H) or w_h.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(
            f"lstm_sequence: inconsistent shapes x={x.shape} w_x={w_x.shape} "
            f"w_h={w_h.shape} b={b.shape}"
        )
    dt = x.dtype
    wx, wh, bd = w_x.data, w_h.data, b.data
    xproj = (x.data.reshape(T * B, I) @ wx).reshape(T, B, 4 * H) + bd
    hs = np.zeros((T + 1, B, H), dtype=dt)
    cs = np.zeros((T + 1, B, H), dtype=dt)
    gates = np.empty((T, B, 4 * H), dtype=dt)  # activated (i, f, g, o)
    for t in range(T):
        z = xproj[t] + hs[t] @ wh
        gt = gates[t]
        # sigmoid(z) = (1 + tanh(z / 2)) / 2 is overflow-free
        np.tanh(0.5 * z, out=gt)
        gt *= 0.5
        gt += 0.5
        gt[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        c = cs[t + 1]
        np.multiply(gt[:, H : 2 * H], cs[t], out=c)
        c += gt[:, :H] * gt[:, 2 * H : 3 * H]
        np.multiply(gt[:, 3 * H :], np.tanh(c), out=hs[t + 1])

    def bw(gout):
        i, f, g, o = (gates[:, :, k * H : (k + 1) * H] for k in range(4))
        tc = np.tanh(cs[1:])
        # per-step local derivatives; only dh/dc carry the recursion
        d_c_from_h = o * (1 - tc * tc)
        d_ifg = np.stack([g * i * (1 - i), cs[:-1] * f * (1 - f), i * (1 - g * g)], axis=2)  # T,B,3,H
        d_o = tc * o * (1 - o)
        dz_all = np.empty((T, B, 4 * H), dtype=dt)
        dh_next = np.zeros((B, H), dtype=dt)
        dc_next = np.zeros((B, H), dtype=dt)
        for t in range(T - 1, -1, -1):
            dh = gout[t] + dh_next
            dc = dc_next + dh * d_c_from_h[t]
            dz = dz_all[t]
            np.multiply(dc[:, None, :], d_ifg[t], out=dz[:, : 3 * H].reshape(B, 3, H))
            np.multiply(dh, d_o[t], out=dz[:, 3 * H :])
            dc_next = dc * f[t]
            dh_next = dz @ wh.T
        dz2 = dz_all.reshape(T * B, 4 * H)
        gx = (dz2 @ wx.T).reshape(T, B, I)
        gwx = x.data.reshape(T * B, I).T @ dz2
        gwh = hs[:-1].reshape(T * B, H).T @ dz2
        gb = dz2.sum(axis=0)
        return gx, gwx, gwh, gb

    return _make(hs[1:].copy(), (x, w_x, w_h, b), bw, "lstm_sequence")


def lstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor):
    """One LSTM cell update on B x I input, composed from tape primitives."""
    H = w_h.shape[0]
    if h_prev.shape[-1] != H or c_prev.shape != h_prev.shape or w_h.shape != (H, 4 * H):
        raise ShapeError(
            f"lstm_step: hidden size mismatch h={h_prev.shape} c={c_prev.shape} w_h={w_h.shape}"
        )
    if w_x.shape != (x_t.shape[-1], 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm_step: input weights {w_x.shape} or bias {b.shape} inconsistent")
    z = matmul(x_t, w_x) + matmul(h_prev, w_h)
    z = z + broadcast_to(b, z.shape)
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H : 2 * H])
    g = tanh(z[:, 2 * H : 3 * H])
    o = sigmoid(z[:, 3 * H :])
    c = f * c_prev + i * g
    h = o * tanh(c)
    return h, c


def seq_batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool,
    running_mean: np.ndarray | None = None,
    running_var: np.ndarray | None = None,
    mask: np.ndarray | None = None,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Sequence-wise batch norm on T x B x F: statistics pooled over time and batch.

    ``mask`` (T x B, 1 for valid frames) restricts the statistics to real frames.
    In training mode the running buffers are updated in place.
    """
    if x.ndim != 3 or gamma.shape != (x.shape[2],) or beta.shape != gamma.shape:
        raise ShapeError(f"seq_batchnorm: shape mismatch x={x.shape} gamma={gamma.shape}")
    xd = x.data
    m = np.ones(xd.shape[:2], dtype=xd.dtype) if mask is None else mask.astype(xd.dtype)
    m3 = m[:, :, None]
    if training:
        n = float(m.sum())
        if n < 2:
            raise ValueError("seq_batchnorm: need at least 2 frames across time and batch in training mode")
        mu = (xd * m3).sum(axis=(0, 1)) / n
        xc = xd - mu
        var = ((xc * xc) * m3).sum(axis=(0, 1)) / n
        if running_mean is not None:
            running_mean *= 1 - momentum
            running_mean += momentum * mu
            running_var *= 1 - momentum
            running_var += momentum * var * n / (n - 1)
    else:
        mu, var = running_mean, running_var
        xc = xd - mu
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    y = (xhat * gd + beta.data) * m3

    def bw(g):
        g = g * m3
        ggamma = (g * xhat).sum(axis=(0, 1))
        gbeta = g.sum(axis=(0, 1))
        gxhat = g * gd
        if training:
            gx = inv / n * (n * gxhat - gxhat.sum(axis=(0, 1)) - xhat * (gxhat * xhat).sum(axis=(0, 1)))
            gx = gx * m3
        else:
            gx = gxhat * inv
        return gx.astype(xd.dtype), ggamma, gbeta

    return _make(y.astype(xd.dtype), (x, gamma, beta), bw, "seq_batchnorm")


# ---------------------------------------------------------------- backward


def topo_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` such that every node's inputs precede it."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, only: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf that requires grad.

    ``only`` restricts accumulation to the given leaves and prunes traversal of
    subgraphs that cannot reach them.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topo_order(loss)
    relevant = None
    if only is not None:
        targets = {id(t) for t in only}
        relevant = set()
        for node in order:
            if id(node) in targets or any(id(p) in relevant for p in node._parents):
                relevant.add(id(node))
        if id(loss) not in relevant:
            return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad and (relevant is None or id(node) in relevant):
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if relevant is not None and id(p) not in relevant:
                continue
            pg = np.asarray(pg, dtype=p.dtype)
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``fn()`` with respect to ``t.data``."""
    out = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        out.reshape(-1)[i] = (fp - fm) / (2 * h)
    return out


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between analytic and finite-difference gradients."""
    for t in inputs:
        t.grad = None
    backward(fn())
    worst = 0.0
    for t in inputs:
        num = numerical_grad(fn, t, h)
        ana = np.zeros_like(num) if t.grad is None else t.grad.astype(np.float64)
        scale = max(np.max(np.abs(num)), np.max(np.abs(ana)), 1e-8)
        worst = max(worst, float(np.max(np.abs(num - ana)) / scale))
    return worst
