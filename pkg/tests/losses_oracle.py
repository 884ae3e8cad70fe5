"""Plain-numpy reimplementation of the stage-1 composite loss, used as an independent oracle."""
from __future__ import annotations

import numpy as np
from scipy.signal import get_window

from regen_stream.dsp import build_filterbank
from regen_stream.losses import Stage1LossConfig

EPS = 1e-8


def frames(x: np.ndarray, size: int, hop: int, left: int) -> np.ndarray:
    n = -(-(x.shape[-1] + left) // hop)
    total = (n - 1) * hop + size
    xp = np.zeros(x.shape[:-1] + (total,))
    xp[..., left:left + x.shape[-1]] = x
    idx = np.arange(size)[None, :] + hop * np.arange(n)[:, None]
    return xp[..., idx]


def spectrum(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    w = get_window("hann", n_fft)  # periodic
    return np.fft.rfft(frames(x, n_fft, hop, n_fft - hop) * w, axis=-1)


def compressed(sx, sy, c):
    px, py = np.abs(sx) ** 2 + EPS, np.abs(sy) ** 2 + EPS
    mag = np.mean((px ** (c / 2) - py ** (c / 2)) ** 2)
    cplx = np.mean(np.abs(sx * px ** ((c - 1) / 2) - sy * py ** ((c - 1) / 2)) ** 2)
    return mag + cplx


def multires(x, y, sizes):
    return sum(np.mean(np.abs(np.sqrt(np.abs(spectrum(x, n, n // 2)) ** 2 + EPS)
                              - np.sqrt(np.abs(spectrum(y, n, n // 2)) ** 2 + EPS))) for n in sizes)


def local_snr(x, y, frame, lo, hi):
    hop = frame // 2
    e_est = np.sum(frames(y, frame, hop, frame - hop) ** 2, axis=-1)
    e_res = np.sum(frames(x - y, frame, hop, frame - hop) ** 2, axis=-1)
    e_cln = np.sum(frames(x, frame, hop, frame - hop) ** 2, axis=-1)
    snr_est = np.clip(10 * np.log10((e_est + EPS) / (e_res + EPS)), lo, hi)
    snr_ref = np.clip(10 * np.log10((e_cln + EPS) / EPS), lo, hi)
    return np.mean(((snr_est - snr_ref) / 10) ** 2)


def neg_si_sdr(x, y):
    vals = []
    for xi, yi in zip(x, y):
        ex = xi @ xi
        s = (yi @ xi) / (ex + 1e-12) * xi
        e = yi - s
        ratio = 10 * np.log10((s @ s + 1e-16 * ex) / (e @ e + 1e-8 * ex))
        vals.append(np.clip(ratio, -50, 50))
    return -np.mean(vals)


def mel_l1(sx, sy, mel):
    mx, my = np.sqrt(np.abs(sx) ** 2 + EPS), np.sqrt(np.abs(sy) ** 2 + EPS)
    return np.mean(np.abs(mx @ mel.T - my @ mel.T))


def stage1_terms(clean, estimate, cfg: Stage1LossConfig) -> dict:
    x, y = np.atleast_2d(clean), np.atleast_2d(estimate)
    st = cfg.stft
    sx, sy = spectrum(x, st.fft_len, st.hop), spectrum(y, st.fft_len, st.hop)
    frame = int(round(cfg.local_snr_frame_ms * st.sample_rate / 1000))
    return {
        "spectral": compressed(sx, sy, cfg.compression),
        "multires": multires(x, y, cfg.multires_fft_sizes),
        "local_snr": local_snr(x, y, frame, *cfg.local_snr_range),
        "si_sdr": neg_si_sdr(x, y),
        "mel_l1": mel_l1(sx, sy, build_filterbank("mel", cfg.mel_bands, st).matrix),
    }


def stage1_total(clean, estimate, cfg: Stage1LossConfig) -> float:
    terms = stage1_terms(clean, estimate, cfg)
    return float(sum(cfg.weights[k] * v for k, v in terms.items()))
