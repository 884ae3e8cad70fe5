"""Differentiable framing, STFT and inverse STFT on autograd tensors.

Complex values use a trailing axis of size 2 (re, im). The geometry matches
:func:`regen_stream.dsp.stft`: ``win_len - hop`` zeros are prepended and the
signal is zero-extended to a whole number of hops.
"""
from __future__ import annotations

import numpy as np

from ..dsp import StftConfig, _hann, _ls_synthesis
from ..errors import ShapeError
from . import autograd as ag
from .autograd import Tensor


def frames_tensor(x, size: int, hop: int, left_pad: int) -> Tensor:
    """(B, L) -> (B, n, size) with ``n = ceil((L + left_pad) / hop)``."""
    x = ag.as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"expected (batch, samples), got {x.shape}", "frames")
    length = x.shape[1]
    n = -(-(length + left_pad) // hop)
    total = (n - 1) * hop + size
    xp = ag.pad(x, [(0, 0), (left_pad, total - left_pad - length)])
    return ag.unfold(xp, size, hop)


def stft_tensor(x, n_fft: int, hop: int, window: np.ndarray | None = None) -> Tensor:
    """Hann-windowed STFT of a (B, L) batch -> (B, frames, n_fft//2+1, 2)."""
    window = _hann(n_fft) if window is None else window
    fr = frames_tensor(x, len(window), hop, len(window) - hop)
    return ag.rfft(fr * window, n_fft)


def stft_cfg_tensor(x, cfg: StftConfig) -> Tensor:
    return stft_tensor(x, cfg.fft_len, cfg.hop, cfg.analysis_window())


def istft_tensor(spec, cfg: StftConfig, length: int) -> Tensor:
    """(B, frames, bins, 2) -> (B, length); adjoint-exact inverse of :func:`stft_cfg_tensor`."""
    spec = ag.as_tensor(spec)
    if spec.ndim != 4 or spec.shape[2] != cfg.n_bins:
        raise ShapeError(f"expected (B, T, {cfg.n_bins}, 2), got {spec.shape}", "istft")
    b, n = spec.shape[:2]
    frames = ag.irfft(spec, cfg.fft_len)[..., : cfg.win_len] * _ls_synthesis(cfg.win_len, cfg.hop)
    total = (n - 1) * cfg.hop + cfg.win_len
    out = ag.fold(frames, cfg.hop, total)[:, cfg.pad:]
    have = out.shape[1]
    if have >= length:
        return out[:, :length]
    return ag.pad(out, [(0, 0), (0, length - have)])


def power_tensor(spec) -> Tensor:
    """|X|^2 of a (..., 2) complex tensor."""
    return ag.square(ag.as_tensor(spec)).sum(axis=-1)
