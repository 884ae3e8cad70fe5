"""Gradient clipping and the decoupled-weight-decay Adam optimizer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .autograd import GradientSet


def clip_grad_global_norm(grads: GradientSet, max_norm: float) -> GradientSet:
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = grads.global_norm
    if norm <= max_norm:
        return grads
    return grads.scaled(max_norm / norm)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: GradientSet | dict, state: AdamState,
               lr: float, weight_decay: float, betas=(0.9, 0.999), eps: float = 1e-8
               ) -> tuple[dict[str, np.ndarray], AdamState]:
    """One AdamW update. Returns new parameter arrays and the advanced state; inputs are not mutated."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if weight_decay < 0:
        raise ValueError("weight_decay must be non-negative")
    b1, b2 = betas
    t = state.step + 1
    new_state = AdamState(step=t)
    new_params = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}", name)
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params[name] = p * (1 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_state.m[name] = m
        new_state.v[name] = v
    return new_params, new_state


class AdamW:
    """Stateful wrapper updating a module's parameters in place."""

    def __init__(self, params: dict, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self, grads: GradientSet, lr: float, weight_decay: float) -> None:
        arrays = {k: p.data for k, p in self.params.items()}
        new, self.state = adamw_step(arrays, grads, self.state, lr, weight_decay, self.betas, self.eps)
        for k, p in self.params.items():
            p.data = new[k]

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.step": np.array([self.state.step], dtype=np.float64)}
        for k in self.params:
            if k in self.state.m:
                out[f"{prefix}.m.{k}"] = self.state.m[k]
                out[f"{prefix}.v.{k}"] = self.state.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        key = f"{prefix}.step"
        if key not in arrays:
            return
        st = AdamState(step=int(arrays[key][0]))
        for k in self.params:
            if f"{prefix}.m.{k}" in arrays:
                st.m[k] = np.array(arrays[f"{prefix}.m.{k}"])
                st.v[k] = np.array(arrays[f"{prefix}.v.{k}"])
        self.state = st
