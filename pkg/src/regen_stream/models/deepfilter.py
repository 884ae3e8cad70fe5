"""Deep filtering: per-bin complex FIR filtering across STFT frames."""
from __future__ import annotations

import numpy as np

from ..dsp import ComplexSpectrogram
from ..errors import ShapeError
from ..nn import autograd as ag
from ..nn.autograd import Tensor


def apply_deep_filter(coeffs: np.ndarray, spec_history, lookahead: int = 0) -> np.ndarray:
    """Filter the lowest ``coeffs.shape[2]`` bins of ``spec_history``.

    ``coeffs`` is complex with shape (frames, order, df_bins): tap ``i`` of output
    frame ``k`` multiplies input frame ``k - i + lookahead``. ``spec_history`` holds
    ``frames + order - 1`` consecutive input frames, the first of which is frame
    ``-(order - 1) + lookahead`` relative to the first output frame. Bins above the
    filtered range pass through from frame ``k`` unchanged.
    """
    hist = spec_history.data if isinstance(spec_history, ComplexSpectrogram) else np.asarray(spec_history)
    c = np.asarray(coeffs)
    if c.ndim != 3:
        raise ShapeError(f"coeffs must be (frames, order, df_bins), got {c.shape}")
    n_out, order, df_bins = c.shape
    if not 0 <= lookahead < order:
        raise ValueError(f"lookahead must be in [0, {order - 1}]")
    if hist.ndim != 2:
        raise ShapeError(f"spec_history must be (frames, bins), got {hist.shape}")
    if hist.shape[0] < n_out + order - 1:
        raise ShapeError(
            f"deep filter needs {n_out + order - 1} history frames, got {hist.shape[0]}; "
            "pad the stream start with zero frames"
        )
    if df_bins > hist.shape[1]:
        raise ShapeError(f"coeffs cover {df_bins} bins but history has only {hist.shape[1]}")
    out = np.array(hist[order - 1 - lookahead:order - 1 - lookahead + n_out], dtype=np.complex128)
    low = np.zeros((n_out, df_bins), dtype=np.complex128)
    for i in range(order):
        start = order - 1 - i
        low += c[:, i, :] * hist[start:start + n_out, :df_bins]
    out[:, :df_bins] = low
    return out


def pad_history(spec, order: int, lookahead: int) -> np.ndarray:
    """Zero-pad a (frames, bins) spectrogram so that it is a valid offline deep-filter history."""
    data = spec.data if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    before = np.zeros((order - 1 - lookahead, data.shape[1]), dtype=np.complex128)
    after = np.zeros((lookahead, data.shape[1]), dtype=np.complex128)
    return np.concatenate([before, data, after], axis=0)


def deep_filter_tensor(coefs: Tensor, windows: Tensor) -> Tensor:
    """Differentiable deep filter.

    ``coefs``: (B, T, F, order, 2) with tap index i; ``windows``: (B, T, F, order, 2)
    where window position i already holds input frame ``k - i + lookahead``.
    Returns (B, T, F, 2).
    """
    prod = ag.complex_mul(coefs, windows)
    return prod.sum(axis=3)
