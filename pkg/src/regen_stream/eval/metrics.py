"""Objective metrics: log-spectral distance, SDR and SI-SDR."""
from __future__ import annotations

import numpy as np

from ..dsp import StftConfig, stft
from ..errors import ShapeError

CAP_DB = 50.0
LSD_EPS = 1e-8


def _pair(reference, estimate) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(reference, dtype=np.float64).reshape(-1)
    y = np.asarray(estimate, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ShapeError(f"reference has {len(x)} samples, estimate has {len(y)}", "metric")
    return x, y


def _ratio_db(num: float, den: float) -> float:
    if den == 0.0:
        return CAP_DB if num > 0.0 else -CAP_DB
    if num == 0.0:
        return -CAP_DB
    return float(np.clip(10.0 * np.log10(num / den), -CAP_DB, CAP_DB))


def sdr(reference, estimate) -> float:
    """10*log10(|x|^2 / |x - x_hat|^2), capped at +-50 dB."""
    x, y = _pair(reference, estimate)
    ex = float(np.dot(x, x))
    if ex == 0.0:
        raise ValueError("SDR is undefined for an all-zero reference")
    r = x - y
    return _ratio_db(ex, float(np.dot(r, r)))


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB, capped at +-50 dB."""
    x, y = _pair(reference, estimate)
    ex = float(np.dot(x, x))
    if ex == 0.0:
        raise ValueError("SI-SDR is undefined for an all-zero reference")
    s = (float(np.dot(y, x)) / ex) * x
    e = y - s
    return _ratio_db(float(np.dot(s, s)), float(np.dot(e, e)))


def lsd(reference, estimate, cfg: StftConfig | None = None) -> float:
    """Mean over frames of the RMS log10-magnitude difference across bins, times 20 (dB)."""
    cfg = cfg or StftConfig()
    x, y = _pair(reference, estimate)
    if len(x) == 0:
        return 0.0
    mx = np.maximum(np.abs(stft(x, cfg).data), LSD_EPS)
    my = np.maximum(np.abs(stft(y, cfg).data), LSD_EPS)
    d = np.log10(mx) - np.log10(my)
    return float(np.mean(np.sqrt(np.mean(d ** 2, axis=1))) * 20.0)
