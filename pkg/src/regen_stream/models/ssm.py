"""Causal diagonal selective state-space layer.

Per step, with input vector x_t and state h:

    delta_t = softplus(W_delta x_t + b_delta)
    a_t     = exp(-delta_t * softplus(A))
    h_t     = a_t * h_{t-1} + (1 - a_t) * (W_B x_t)
    y_t     = W_C h_t + D * x_t
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import StreamError
from ..nn import autograd as ag
from ..nn.autograd import Tensor
from ..nn.layers import Linear, Module, Parameter


@dataclass
class SsmParams:
    w_delta: np.ndarray  # (N, H)
    b_delta: np.ndarray  # (N,)
    a: np.ndarray  # (N,), decay rate is softplus(a)
    w_b: np.ndarray  # (N, H)
    w_c: np.ndarray  # (H, N)
    d: np.ndarray  # (H,)

    @property
    def state_dim(self) -> int:
        return self.w_b.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_b.shape[1]


@dataclass
class SsmState:
    h: np.ndarray
    steps: int = 0

    @classmethod
    def zeros(cls, *lead, state_dim: int) -> "SsmState":
        return cls(np.zeros((*lead, state_dim)))

    def reset(self) -> None:
        self.h = np.zeros_like(self.h)
        self.steps = 0


def _softplus(x):
    return np.logaddexp(0.0, x)


def ssm_step(x_t: np.ndarray, state: SsmState, params: SsmParams) -> tuple[np.ndarray, SsmState]:
    """Advance the recurrence by one step. ``x_t`` is (..., H); ``state.h`` is (..., N)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if state.h.shape[-1] != params.state_dim:
        raise ValueError(f"state dimension {state.h.shape[-1]} does not match {params.state_dim}")
    if not np.all(np.isfinite(state.h)):
        raise StreamError("non-finite SSM state; reset the stream")
    delta = _softplus(x_t @ params.w_delta.T + params.b_delta)
    a_t = np.exp(-delta * _softplus(params.a))
    h = a_t * state.h + (1.0 - a_t) * (x_t @ params.w_b.T)
    y = h @ params.w_c.T + params.d * x_t
    if not np.all(np.isfinite(h)):
        raise StreamError("SSM state became non-finite; reset the stream")
    return y, SsmState(h, state.steps + 1)


class SelectiveSSM(Module):
    def __init__(self, hidden: int, state_dim: int, rng: np.random.Generator, weight_norm: bool = False):
        self.hidden, self.state_dim = hidden, state_dim
        self.w_delta = Linear(hidden, state_dim, rng)
        # decay rates softplus(a) spread over roughly [0.1, 2]
        self.a = Parameter(np.log(np.expm1(np.linspace(0.1, 2.0, state_dim))))
        self.w_b = Linear(hidden, state_dim, rng, bias=False, weight_norm=weight_norm)
        self.w_c = Linear(state_dim, hidden, rng, bias=False, weight_norm=weight_norm)
        self.d = Parameter(rng.uniform(-0.5, 0.5, hidden))

    def numpy_params(self) -> SsmParams:
        return SsmParams(
            w_delta=self.w_delta.effective_weight.data.copy(),
            b_delta=self.w_delta.bias.data.copy(),
            a=self.a.data.copy(),
            w_b=self.w_b.effective_weight.data.copy(),
            w_c=self.w_c.effective_weight.data.copy(),
            d=self.d.data.copy(),
        )

    def __call__(self, x, h0: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """x: (B, T, H) sequences -> (y (B, T, H), final state (B, N))."""
        x = ag.as_tensor(x)
        delta = ag.softplus(self.w_delta(x))
        a_t = ag.exp(-delta * ag.softplus(self.a))
        u = self.w_b(x)
        h = ag.linear_recurrence(a_t, (1.0 - a_t) * u, Tensor(h0))
        y = self.w_c(h) + self.d * x
        last = h.data[:, -1] if h.shape[1] else h0
        return y, np.array(last)
