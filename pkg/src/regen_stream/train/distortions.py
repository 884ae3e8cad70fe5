"""The seven degradation types used to build synthetic training pairs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from ..dsp import SUPPORTED_RATES, resample

KINDS = ("additive_noise", "reverb", "clipping", "bandwidth_limit", "codec", "packet_loss", "wind_noise")

# documented valid ranges, inclusive
RANGES = {
    "additive_noise": {"snr_db": (-10.0, 40.0)},
    "reverb": {"rt60_s": (0.05, 2.0)},
    "clipping": {"threshold": (1e-3, 1.0)},
    "bandwidth_limit": {"cutoff_hz": (500.0, 24000.0)},
    "codec": {"bits": (2, 8)},
    "packet_loss": {"loss_rate": (0.0, 1.0), "burst_ms": (5.0, 100.0)},
    "wind_noise": {"snr_db": (-10.0, 40.0), "low_hz": (20.0, 300.0), "high_hz": (20.0, 300.0)},
}


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}; expected one of {KINDS}")
        ranges = RANGES[self.kind]
        missing = sorted(set(ranges) - set(self.params))
        extra = sorted(set(self.params) - set(ranges))
        if missing or extra:
            raise ValueError(f"{self.kind}: missing params {missing}, unexpected params {extra}")
        for name, (lo, hi) in ranges.items():
            v = self.params[name]
            if not lo <= v <= hi:
                raise ValueError(f"{self.kind}.{name}={v} outside [{lo}, {hi}]")
        if self.kind == "wind_noise" and self.params["low_hz"] >= self.params["high_hz"]:
            raise ValueError("wind_noise needs low_hz < high_hz")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionSpec":
        return cls(d["kind"], dict(d["params"]))


def _power(x: np.ndarray) -> float:
    return float(np.mean(x ** 2)) if len(x) else 0.0


def scale_to_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Scale ``noise`` so that 10*log10(P_clean / P_noise) equals ``snr_db``."""
    pc, pn = _power(clean), _power(noise)
    if pc == 0.0 or pn == 0.0:
        return np.zeros_like(noise)
    return noise * np.sqrt(pc / (pn * 10.0 ** (snr_db / 10.0)))


def additive_noise(x, rate, rng, snr_db):
    noise = rng.standard_normal(len(x))
    # random spectral tilt between white and roughly pink
    tilt = rng.uniform(0.0, 0.95)
    noise = sps.lfilter([1.0], [1.0, -tilt], noise)
    return x + scale_to_snr(x, noise, snr_db)


def reverb(x, rate, rng, rt60_s):
    n = max(1, int(rt60_s * rate))
    t = np.arange(n) / rate
    rir = rng.standard_normal(n) * np.exp(-6.9078 * t / rt60_s)  # 60 dB decay at rt60
    rir[0] = 1.0
    rir /= np.linalg.norm(rir)
    return sps.fftconvolve(x, rir)[: len(x)]


def clipping(x, rate, rng, threshold):
    return np.clip(x, -threshold, threshold)


def bandwidth_limit(x, rate, rng, cutoff_hz):
    nyq = rate / 2.0
    if cutoff_hz >= nyq * 0.99:
        return x.copy()
    sos = sps.butter(8, cutoff_hz, btype="low", fs=rate, output="sos")
    y = sps.sosfilt(sos, x)
    low = [r for r in SUPPORTED_RATES if 2 * cutoff_hz <= r < rate]
    if low:
        r = min(low)
        y = resample(resample(y, rate, r), r, rate)[: len(x)]
        if len(y) < len(x):
            y = np.concatenate([y, np.zeros(len(x) - len(y))])
    return y


def codec(x, rate, rng, bits):
    mu = 255.0
    xc = np.clip(x, -1.0, 1.0)
    comp = np.sign(xc) * np.log1p(mu * np.abs(xc)) / np.log1p(mu)
    levels = 2 ** int(bits) - 1
    q = np.round((comp + 1.0) / 2.0 * levels) / levels * 2.0 - 1.0
    return np.sign(q) * np.expm1(np.abs(q) * np.log1p(mu)) / mu


def packet_loss(x, rate, rng, loss_rate, burst_ms):
    size = max(1, int(round(burst_ms * rate / 1000.0)))
    n_packets = -(-len(x) // size)
    drop = rng.random(n_packets) < loss_rate
    mask = np.repeat(~drop, size)[: len(x)]
    return x * mask


def wind_noise(x, rate, rng, snr_db, low_hz, high_hz):
    n = len(x)
    sos = sps.butter(4, [low_hz, high_hz], btype="band", fs=rate, output="sos")
    noise = sps.sosfilt(sos, rng.standard_normal(n))
    # gusts: smoothed positive envelope, a few per second
    gust = sps.sosfilt(sps.butter(2, 2.0, fs=rate, output="sos"), np.abs(rng.standard_normal(n)))
    gust = np.maximum(gust, 0.0)
    return x + scale_to_snr(x, noise * gust, snr_db)


_APPLY = {
    "additive_noise": additive_noise,
    "reverb": reverb,
    "clipping": clipping,
    "bandwidth_limit": bandwidth_limit,
    "codec": codec,
    "packet_loss": packet_loss,
    "wind_noise": wind_noise,
}


def apply_distortion(x, rate: int, spec: DistortionSpec, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.asarray(_APPLY[spec.kind](x, rate, rng, **spec.params), dtype=np.float64)


def sample_spec(kind: str, rate: int, rng: np.random.Generator) -> DistortionSpec:
    """Draw kind-specific parameters from the ranges used for training data."""
    if kind == "additive_noise":
        p = {"snr_db": float(rng.uniform(-5.0, 20.0))}
    elif kind == "reverb":
        p = {"rt60_s": float(rng.uniform(0.2, 1.0))}
    elif kind == "clipping":
        p = {"threshold": float(rng.uniform(0.05, 0.4))}
    elif kind == "bandwidth_limit":
        p = {"cutoff_hz": float(min(rate / 2.0, rng.choice([2000.0, 4000.0, 8000.0, 11025.0])))}
    elif kind == "codec":
        p = {"bits": int(rng.integers(4, 8))}
    elif kind == "packet_loss":
        p = {"loss_rate": float(rng.uniform(0.05, 0.3)), "burst_ms": float(rng.uniform(10.0, 40.0))}
    elif kind == "wind_noise":
        lo = float(rng.uniform(20.0, 80.0))
        p = {"snr_db": float(rng.uniform(-5.0, 15.0)), "low_hz": lo, "high_hz": float(rng.uniform(lo + 50.0, 300.0))}
    else:
        raise ValueError(f"unknown distortion kind {kind!r}")
    return DistortionSpec(kind, p)
