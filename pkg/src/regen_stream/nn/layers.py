"""Parameterized layers built on the autodiff ops.

Sequence layers use a channels-last layout: (batch, time, ..., channels).
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeError
from . import autograd as ag
from .autograd import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Minimal container: parameters and submodules are discovered from attributes."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + key + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> dict[str, Parameter]:
        params = {}
        for name, p in self.named_parameters():
            if name in params:
                raise ValueError(f"duplicate parameter name {name}")
            p.name = name
            params[name] = p
        return params

    def num_params(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.parameters()
        if strict:
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            if missing or extra:
                raise KeyError(f"parameter mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in params.items():
            if name not in arrays:
                continue
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"shape {arr.shape} does not match parameter shape {p.shape}", name)
            p.data = arr.copy()

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.parameters().items()}


def weight_norm_effective(direction, gain) -> Tensor:
    """w = gain * direction / ||direction||, with norms taken per output channel (axis 0)."""
    direction, gain = ag.as_tensor(direction), ag.as_tensor(gain)
    axes = tuple(range(1, direction.ndim))
    sq = ag.square(direction).sum(axis=axes, keepdims=True)
    if np.any(sq.data == 0):
        raise ValueError("weight norm direction has an all-zero output channel")
    shape = (-1,) + (1,) * (direction.ndim - 1)
    return direction * (gain.reshape(shape) / ag.sqrt(sq))


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    # Kaiming-uniform with negative slope sqrt(5), i.e. bound = 1/sqrt(fan_in)
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


class _Weighted(Module):
    """Shared weight handling, with optional weight normalization."""

    def _init_weight(self, w: np.ndarray, weight_norm: bool) -> None:
        self._wn = weight_norm
        if weight_norm:
            self.direction = Parameter(w)
            norms = np.sqrt(np.sum(w.reshape(w.shape[0], -1) ** 2, axis=1))
            self.gain = Parameter(norms)
        else:
            self.weight = Parameter(w)

    @property
    def effective_weight(self) -> Tensor:
        if self._wn:
            return weight_norm_effective(self.direction, self.gain)
        return self.weight

    def set_weight(self, w: np.ndarray, gain: np.ndarray | None = None) -> None:
        w = np.asarray(w, dtype=np.float64)
        if self._wn:
            norms = np.sqrt(np.sum(w.reshape(w.shape[0], -1) ** 2, axis=1))
            direction = w.copy()
            zero = norms == 0
            if np.any(zero):
                # keep a valid direction; the gain carries the zero
                direction[zero] = self.direction.data[zero]
            self.direction.data = direction
            self.gain.data = norms if gain is None else np.asarray(gain, dtype=np.float64)
        else:
            self.weight.data = w.copy()


class Linear(_Weighted):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, weight_norm: bool = False):
        self.in_features = in_features
        self.out_features = out_features
        self._init_weight(kaiming_uniform(rng, (out_features, in_features), in_features), weight_norm)
        if bias:
            self.bias = Parameter(kaiming_uniform(rng, (out_features,), in_features))
        else:
            self.bias = None

    def __call__(self, x) -> Tensor:
        x = ag.as_tensor(x)
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"expected last dim {self.in_features}, got input shape {x.shape}", type(self).__name__)
        lead = x.shape[:-1]
        y = x.reshape(-1, self.in_features) @ ag.transpose(self.effective_weight)
        if self.bias is not None:
            y = y + self.bias
        return y.reshape(lead + (self.out_features,))


class GroupedLinear(Module):
    """Block-diagonal linear map: the features are split into ``groups`` independent chunks."""

    def __init__(self, in_features: int, out_features: int, groups: int, rng: np.random.Generator):
        if in_features % groups or out_features % groups:
            raise ValueError(f"groups={groups} must divide in={in_features} and out={out_features}")
        self.in_features, self.out_features, self.groups = in_features, out_features, groups
        gi, go = in_features // groups, out_features // groups
        self.weight = Parameter(kaiming_uniform(rng, (groups, gi, go), gi))

    def __call__(self, x) -> Tensor:
        x = ag.as_tensor(x)
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"expected last dim {self.in_features}, got input shape {x.shape}", "GroupedLinear")
        lead = x.shape[:-1]
        g = self.groups
        xg = x.reshape(-1, g, self.in_features // g)
        y = ag.einsum("ngi,gio->ngo", xg, self.weight)
        return y.reshape(lead + (self.out_features,))


class Conv1d(_Weighted):
    """1-D convolution over axis 1 of an (N, L, C) tensor.

    ``padding`` is ``"same"``, ``"causal"``, ``"valid"`` or an explicit (left, right) pair.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 groups: int = 1, padding="same", bias: bool = True, weight_norm: bool = False):
        if in_ch % groups or out_ch % groups:
            raise ValueError("groups must divide in_ch and out_ch")
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, kernel
        self.stride, self.groups = stride, groups
        if padding == "same":
            self.pad = ((kernel - 1) // 2, kernel // 2)
        elif padding == "causal":
            self.pad = (kernel - 1, 0)
        elif padding == "valid":
            self.pad = (0, 0)
        else:
            self.pad = tuple(padding)
        fan_in = in_ch // groups * kernel
        self._init_weight(kaiming_uniform(rng, (out_ch, in_ch // groups, kernel), fan_in), weight_norm)
        self.bias = Parameter(kaiming_uniform(rng, (out_ch,), fan_in)) if bias else None

    def output_length(self, length: int) -> int:
        return (length + sum(self.pad) - self.kernel) // self.stride + 1

    def __call__(self, x) -> Tensor:
        x = ag.as_tensor(x)
        if x.ndim != 3 or x.shape[2] != self.in_ch:
            raise ShapeError(f"expected (N, L, {self.in_ch}), got {x.shape}", "Conv1d")
        n = x.shape[0]
        xt = ag.transpose(x, (0, 2, 1))
        if any(self.pad):
            xt = ag.pad(xt, [(0, 0), (0, 0), self.pad])
        if xt.shape[-1] < self.kernel:
            raise ShapeError(f"input length {x.shape[1]} too short for kernel {self.kernel}", "Conv1d")
        cols = ag.unfold(xt, self.kernel, self.stride)  # (N, C, n, k)
        g = self.groups
        cols = cols.reshape(n, g, self.in_ch // g, cols.shape[2], self.kernel)
        w = self.effective_weight.reshape(g, self.out_ch // g, self.in_ch // g, self.kernel)
        y = ag.einsum("bgcnk,gock->bngo", cols, w)
        y = y.reshape(n, y.shape[1], self.out_ch)
        if self.bias is not None:
            y = y + self.bias
        return y


class TimeFreqConv(Module):
    """2-D convolution over (time, freq) of a (B, T, F, C) tensor.

    Time is handled causally through explicit context frames: the caller passes
    the last ``kt - 1`` input frames of the previous chunk (zeros at stream start)
    and receives the updated context back. Frequency uses 'same' zero padding.
    """

    def __init__(self, in_ch: int, out_ch: int, kt: int, kf: int, rng: np.random.Generator):
        self.in_ch, self.out_ch, self.kt, self.kf = in_ch, out_ch, kt, kf
        fan_in = in_ch * kt * kf
        self.weight = Parameter(kaiming_uniform(rng, (out_ch, in_ch, kt, kf), fan_in))
        self.bias = Parameter(kaiming_uniform(rng, (out_ch,), fan_in))

    def initial_context(self, batch: int, n_freq: int) -> np.ndarray:
        return np.zeros((batch, self.kt - 1, n_freq, self.in_ch))

    def __call__(self, x, context) -> tuple[Tensor, np.ndarray]:
        x = ag.as_tensor(x)
        if x.ndim != 4 or x.shape[-1] != self.in_ch:
            raise ShapeError(f"expected (B, T, F, {self.in_ch}), got {x.shape}", "TimeFreqConv")
        full = ag.concat([Tensor(context), x], axis=1) if self.kt > 1 else x
        new_context = full.data[:, full.shape[1] - (self.kt - 1):] if self.kt > 1 else context
        xt = ag.transpose(full, (0, 3, 1, 2))  # (B, C, T, F)
        fl = (self.kf - 1) // 2
        xt = ag.pad(xt, [(0, 0), (0, 0), (0, 0), (fl, self.kf - 1 - fl)])
        cols = ag.unfold(xt, self.kf, 1)  # (B, C, T, F, kf)
        cols = ag.transpose(cols, (0, 1, 3, 4, 2))  # (B, C, F, kf, T)
        cols = ag.unfold(cols, self.kt, 1)  # (B, C, F, kf, T', kt)
        y = ag.einsum("bcfktj,ocjk->btfo", cols, self.weight)
        return y + self.bias, np.array(new_context)


class GRU(Module):
    def __init__(self, in_features: int, hidden: int, rng: np.random.Generator):
        self.in_features, self.hidden = in_features, hidden
        self.w_ih = Parameter(kaiming_uniform(rng, (3 * hidden, in_features), in_features))
        self.w_hh = Parameter(np.concatenate([orthogonal(rng, hidden, hidden) for _ in range(3)], axis=0))
        self.b_ih = Parameter(kaiming_uniform(rng, (3 * hidden,), hidden))
        self.b_hh = Parameter(kaiming_uniform(rng, (3 * hidden,), hidden))

    def initial_state(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.hidden))

    def __call__(self, x, h0=None) -> tuple[Tensor, np.ndarray]:
        """x: (B, T, in) -> (outputs (B, T, H), final state as an array)."""
        x = ag.as_tensor(x)
        if x.ndim != 3 or x.shape[-1] != self.in_features:
            raise ShapeError(f"expected (B, T, {self.in_features}), got {x.shape}", "GRU")
        b, t_len, _ = x.shape
        hsz = self.hidden
        h = Tensor(self.initial_state(b) if h0 is None else h0)
        gi = ag.einsum("bti,gi->btg", x, self.w_ih) + self.b_ih
        w_hh_t = ag.transpose(self.w_hh)
        outs = []
        for t in range(t_len):
            gi_t = gi[:, t]
            gh = h @ w_hh_t + self.b_hh
            r = ag.sigmoid(gi_t[:, :hsz] + gh[:, :hsz])
            z = ag.sigmoid(gi_t[:, hsz:2 * hsz] + gh[:, hsz:2 * hsz])
            n = ag.tanh(gi_t[:, 2 * hsz:] + r * gh[:, 2 * hsz:])
            h = n + z * (h - n)
            outs.append(h)
        if not outs:
            return Tensor(np.zeros((b, 0, hsz))), h.data
        return ag.stack(outs, axis=1), h.data
