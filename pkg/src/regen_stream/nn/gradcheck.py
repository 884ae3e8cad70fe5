"""Central finite-difference checks against the autodiff engine."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tensor, backward


def _rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    diff = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    scale = max(float(np.max(np.abs(numeric))) if numeric.size else 0.0,
                float(np.max(np.abs(analytic))) if analytic.size else 0.0,
                floor)
    return diff / scale


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: dict[str, np.ndarray],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
) -> dict[str, float]:
    """Compare analytic gradients of ``fn(**tensors)`` with central differences.

    Each input array gets its own error: the max abs deviation over the checked
    coordinates divided by the larger of the two gradients' max magnitudes.
    ``max_coords`` limits the number of randomly chosen coordinates per input.
    """
    rng = rng or np.random.default_rng(0)
    tensors = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k) for k, v in inputs.items()}
    loss = fn(**tensors)
    grads = backward(loss, tensors)
    errors = {}
    for name, arr in inputs.items():
        base = np.array(arr, dtype=np.float64)
        flat_idx = np.arange(base.size)
        if max_coords is not None and base.size > max_coords:
            flat_idx = rng.choice(base.size, max_coords, replace=False)
        numeric = np.empty(len(flat_idx))
        for j, i in enumerate(flat_idx):
            vals = []
            for sign in (1.0, -1.0):
                pert = base.copy().reshape(-1)
                pert[i] += sign * h
                args = {k: Tensor(v) for k, v in inputs.items()}
                args[name] = Tensor(pert.reshape(base.shape))
                vals.append(fn(**args).item())
            numeric[j] = (vals[0] - vals[1]) / (2 * h)
        analytic = grads[name].reshape(-1)[flat_idx]
        errors[name] = _rel_err(analytic, numeric, floor)
    return errors


def check_directional(
    fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    rng: np.random.Generator | None = None,
    floor: float = 1e-10,
) -> dict[str, float]:
    """Directional-derivative check for models with many parameters.

    For every parameter tensor a random unit direction ``v`` is drawn and
    ``<grad, v>`` is compared with ``(f(p + h v) - f(p - h v)) / 2h``. ``fn`` must
    read the parameter tensors' ``.data`` on each call.
    """
    rng = rng or np.random.default_rng(0)
    grads = backward(fn(), params)
    errors = {}
    for name, p in params.items():
        v = rng.standard_normal(p.shape)
        v /= np.linalg.norm(v) or 1.0
        analytic = float(np.sum(grads[name] * v))
        orig = p.data
        try:
            p.data = orig + h * v
            f_plus = fn().item()
            p.data = orig - h * v
            f_minus = fn().item()
        finally:
            p.data = orig
        numeric = (f_plus - f_minus) / (2 * h)
        errors[name] = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
    return errors
