"""A small reverse-mode autodiff engine over numpy arrays.

Each op computes its forward value eagerly and, when gradients are being
recorded, attaches a closure mapping the output gradient to gradients of its
inputs. :func:`backward` walks the recorded graph in reverse topological order.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError

_mode = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


class no_grad:
    """Context manager that disables graph recording in the current thread."""

    def __enter__(self):
        self._prev = is_grad_enabled()
        _mode.enabled = False
        return self

    def __exit__(self, *exc):
        _mode.enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # -- operators ----------------------------------------------------------
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- method forms -------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return abs_(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_np(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.logaddexp(0.0, a.data), (a,), lambda g: (g * _sigmoid_np(a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    # np.sign(0) == 0, i.e. the zero subgradient at the kink
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Hard clip with zero gradient outside ``[lo, hi]``."""
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return sum_(a, axes, keepdims) * (1.0 / max(count, 1))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    axes = list(range(as_tensor(a).ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def _is_basic_index(idx) -> bool:
    if not isinstance(idx, tuple):
        idx = (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None for i in idx)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros(a.shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(ts), bw)


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(out, tuple(ts), bw)


def pad(a, widths) -> Tensor:
    """Zero padding; ``widths`` is a sequence of (before, after) per axis."""
    a = as_tensor(a)
    widths = [tuple(w) for w in widths]
    out = np.pad(a.data, widths)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _make(out, (a,), lambda g: (g[sl],))


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul expects operands with ndim >= 2, got {a.shape} and {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw)


def _einsum2(sa: str, sb: str, so: str, x: np.ndarray, y: np.ndarray, dims: dict) -> np.ndarray:
    """Two-operand einsum evaluated as one batched matrix product."""
    batch = [c for c in so if c in sa and c in sb]
    free_a = [c for c in so if c in sa and c not in sb]
    free_b = [c for c in so if c in sb and c not in sa]
    contr = [c for c in sa if c in sb and c not in so]
    size = lambda cs: int(np.prod([dims[c] for c in cs], dtype=np.int64))  # noqa: E731
    xa = np.transpose(x, [sa.index(c) for c in batch + free_a + contr])
    xa = xa.reshape(size(batch), size(free_a), size(contr))
    yb = np.transpose(y, [sb.index(c) for c in batch + contr + free_b])
    yb = yb.reshape(size(batch), size(contr), size(free_b))
    res = np.matmul(xa, yb).reshape([dims[c] for c in batch + free_a + free_b])
    order = batch + free_a + free_b
    return np.ascontiguousarray(np.transpose(res, [order.index(c) for c in so]))


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum with explicit output subscripts and no repeated indices."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s in (sa, sb, out_sub):
        if len(set(s)) != len(s):
            raise ValueError(f"repeated index in einsum operand {s!r}")
    for ch in sa:
        if ch not in sb and ch not in out_sub:
            raise ValueError(f"index {ch!r} of first operand must appear elsewhere in {subscripts!r}")
    for ch in sb:
        if ch not in sa and ch not in out_sub:
            raise ValueError(f"index {ch!r} of second operand must appear elsewhere in {subscripts!r}")
    if len(sa) != a.ndim or len(sb) != b.ndim:
        raise ShapeError(f"einsum {subscripts!r} rank mismatch for {a.shape} and {b.shape}")
    dims: dict[str, int] = {}
    for s_, shp in ((sa, a.shape), (sb, b.shape)):
        for ch, n in zip(s_, shp):
            if dims.setdefault(ch, n) != n:
                raise ShapeError(f"einsum {subscripts!r}: index {ch!r} has sizes {dims[ch]} and {n}")
    out = _einsum2(sa, sb, out_sub, a.data, b.data, dims)

    def bw(g):
        ga = _einsum2(out_sub, sb, sa, g, b.data, dims) if a.requires_grad else None
        gb = _einsum2(out_sub, sa, sb, g, a.data, dims) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw)


# ---------------------------------------------------------------------------
# Framing and spectral ops (all act on the last axis)
# ---------------------------------------------------------------------------


def _fold_np(frames: np.ndarray, step: int, length: int) -> np.ndarray:
    *lead, n, size = frames.shape
    out = np.zeros((*lead, length))
    if n == 0:
        return out
    if size <= n:
        for j in range(size):
            out[..., j:j + step * (n - 1) + 1:step] += frames[..., :, j]
    else:
        for i in range(n):
            out[..., i * step:i * step + size] += frames[..., i, :]
    return out


def _unfold_np(x: np.ndarray, size: int, step: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(x, size, axis=-1)[..., ::step, :]


def unfold(a, size: int, step: int = 1) -> Tensor:
    """Sliding windows over the last axis: (..., L) -> (..., n, size)."""
    a = as_tensor(a)
    length = a.shape[-1]
    if length < size:
        raise ShapeError(f"unfold needs at least {size} samples on the last axis, got {length}")
    out = np.ascontiguousarray(_unfold_np(a.data, size, step))
    return _make(out, (a,), lambda g: (_fold_np(g, step, length),))


def fold(a, step: int, length: int) -> Tensor:
    """Overlap-add of frames (..., n, size) into (..., length); adjoint of :func:`unfold`."""
    a = as_tensor(a)
    size = a.shape[-1]
    n = a.shape[-2]
    if (n - 1) * step + size > length:
        raise ShapeError("fold output length too short for the given frames")

    def bw(g):
        return (np.ascontiguousarray(_unfold_np(g, size, step)[..., :n, :]),)

    return _make(_fold_np(a.data, step, length), (a,), bw)


def _edge_factor(n_fft: int) -> np.ndarray:
    c = np.full(n_fft // 2 + 1, 2.0)
    c[0] = 1.0
    if n_fft % 2 == 0:
        c[-1] = 1.0
    return c


def rfft(a, n: int) -> Tensor:
    """Real FFT of the last axis, zero-padded to ``n``; output (..., n//2+1, 2) as (re, im)."""
    a = as_tensor(a)
    length = a.shape[-1]
    if length > n:
        raise ShapeError(f"rfft input length {length} exceeds n={n}")
    spec = np.fft.rfft(a.data, n=n, axis=-1)
    out = np.stack([spec.real, spec.imag], axis=-1)
    c = _edge_factor(n)

    def bw(g):
        gc = (g[..., 0] + 1j * g[..., 1]) / c
        return (np.fft.irfft(gc, n=n, axis=-1)[..., :length] * n,)

    return _make(out, (a,), bw)


def irfft(a, n: int) -> Tensor:
    """Inverse of :func:`rfft` for a (..., n//2+1, 2) input; imaginary DC/Nyquist parts are ignored."""
    a = as_tensor(a)
    if a.shape[-1] != 2 or a.shape[-2] != n // 2 + 1:
        raise ShapeError(f"irfft expects (..., {n // 2 + 1}, 2), got {a.shape}")
    out = np.fft.irfft(a.data[..., 0] + 1j * a.data[..., 1], n=n, axis=-1)
    c = _edge_factor(n)

    def bw(g):
        spec = np.fft.rfft(g, n=n, axis=-1) * (c / n)
        return (np.stack([spec.real, spec.imag], axis=-1),)

    return _make(out, (a,), bw)


def complex_split(a) -> tuple[Tensor, Tensor]:
    """(..., 2) -> (re, im)."""
    a = as_tensor(a)
    return a[..., 0], a[..., 1]


def complex_join(re, im) -> Tensor:
    return stack([re, im], axis=-1)


def complex_mul(a, b) -> Tensor:
    """Product of two (..., 2) complex tensors (broadcasting)."""
    ar, ai = complex_split(a)
    br, bi = complex_split(b)
    return complex_join(ar * br - ai * bi, ar * bi + ai * br)


def avg_pool2(a) -> Tensor:
    """Average-pool by 2 with stride 2 along axis 1 of a (B, L, ...) tensor; a trailing odd sample is dropped."""
    a = as_tensor(a)
    half = a.shape[1] // 2
    x = a[:, : 2 * half]
    return reshape(x, (a.shape[0], half, 2) + a.shape[2:]).mean(axis=2)


# ---------------------------------------------------------------------------
# Diagonal linear recurrence (the sequential core of the selective SSM)
# ---------------------------------------------------------------------------


def linear_recurrence(a, b, h0) -> Tensor:
    """h_t = a_t * h_{t-1} + b_t along axis 1; ``a``/``b`` are (B, T, ...), ``h0`` is (B, ...).

    Returns the stacked states (B, T, ...).
    """
    a, b, h0 = as_tensor(a), as_tensor(b), as_tensor(h0)
    if a.shape != b.shape or a.shape[:1] + a.shape[2:] != h0.shape:
        raise ShapeError(f"linear_recurrence shapes a={a.shape} b={b.shape} h0={h0.shape}")
    T = a.shape[1]
    h = np.empty(a.shape)
    prev = h0.data
    for t in range(T):
        prev = a.data[:, t] * prev + b.data[:, t]
        h[:, t] = prev

    def bw(g):
        lam = np.zeros(h0.shape)
        ga = np.empty(a.shape)
        gb = np.empty(b.shape)
        for t in range(T - 1, -1, -1):
            lam = g[:, t] + lam
            gb[:, t] = lam
            prev_h = h[:, t - 1] if t > 0 else h0.data
            ga[:, t] = lam * prev_h
            lam = lam * a.data[:, t]
        return ga, gb, lam

    return _make(h, (a, b, h0), bw)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


@dataclass
class GradientSet:
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def __contains__(self, name: str) -> bool:
        return name in self.grads

    def __iter__(self):
        return iter(self.grads)

    def __len__(self):
        return len(self.grads)

    def items(self):
        return self.grads.items()

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet({k: v * factor for k, v in self.grads.items()})


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, params=None) -> GradientSet:
    """Gradients of a scalar ``loss`` with respect to ``params``.

    ``params`` is a mapping name -> Tensor (or an iterable of named Tensors). When
    omitted, every named leaf reachable from the loss is collected. Parameters the
    loss does not depend on receive exact zeros.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("loss must be a Tensor")
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None and not isinstance(params, dict):
        params = {p.name: p for p in params}

    grads: dict[int, np.ndarray] = {}
    leaves: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones(loss.shape)
        for node in reversed(_topo_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                leaves[id(node)] = g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = np.array(pg, dtype=np.float64, copy=True).reshape(p.shape)

    out: dict[str, np.ndarray] = {}
    if params is None:
        for node in _topo_order(loss) if loss.requires_grad else []:
            if node._backward is None and node.name is not None and id(node) in leaves:
                out[node.name] = leaves[id(node)]
    else:
        for name, p in params.items():
            g = leaves.get(id(p))
            out[name] = g if g is not None else np.zeros(p.shape)
    return GradientSet(out)
