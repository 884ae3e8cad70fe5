"""Mono WAV reading and writing (RIFF PCM16 and IEEE float32)."""
from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from scipy.io import wavfile


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Return ``(samples, rate)`` with samples as float64 in [-1, 1].

    Multi-channel files are downmixed by averaging.
    """
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype} in {path}")
    if x.ndim == 2:
        warnings.warn(f"{path}: downmixing {x.shape[1]} channels to mono", stacklevel=2)
        x = x.mean(axis=1)
    return x, int(rate)


def write_wav(path: str | Path, samples, rate: int, subtype: str = "float32") -> None:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("only mono output is supported")
    if subtype == "float32":
        data = x.astype(np.float32)
    elif subtype == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV subtype {subtype!r}")
    wavfile.write(str(path), int(rate), data)
