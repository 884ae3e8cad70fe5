"""Signal-processing kernels: STFT/iSTFT, resampling, ERB/Mel filterbanks and latency accounting.

All functions here are pure and operate in double precision.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import ConfigMismatchError, ShapeError, UnsupportedRateError

SUPPORTED_RATES = (8000, 16000, 22050, 24000, 32000, 44100, 48000)


@dataclass(frozen=True)
class StftConfig:
    fft_len: int = 960
    win_len: int | None = None
    hop: int = 480
    window: str = "hann"
    lookahead_frames: int = 2
    sample_rate: int = 48000

    def __post_init__(self):
        if self.win_len is None:
            object.__setattr__(self, "win_len", self.fft_len)
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}; only 'hann' is implemented")
        if self.fft_len < self.win_len:
            raise ValueError("fft_len must be >= win_len")
        if self.hop <= 0 or self.win_len % self.hop != 0:
            raise ValueError(f"hop ({self.hop}) must divide win_len ({self.win_len})")
        if self.win_len < 2 * self.hop:
            raise ValueError("hop must be at most win_len / 2 for Hann overlap-add")
        if self.lookahead_frames < 0:
            raise ValueError("lookahead_frames must be >= 0")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    @property
    def pad(self) -> int:
        """Zeros prepended so that frame k ends at sample k*hop + hop - 1."""
        return self.win_len - self.hop

    @property
    def latency_samples(self) -> int:
        return self.win_len + self.lookahead_frames * self.hop

    def n_frames(self, n_samples: int) -> int:
        if n_samples <= 0:
            return 0
        return -(-(n_samples + self.pad) // self.hop)

    def analysis_window(self) -> np.ndarray:
        return _hann(self.win_len)

    def synthesis_window(self) -> np.ndarray:
        return _ls_synthesis(self.win_len, self.hop)

    def geometry(self) -> tuple[int, int, int, str]:
        return (self.fft_len, self.win_len, self.hop, self.window)

    def to_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=32)
def _hann_cached(n: int) -> np.ndarray:
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def _hann(n: int) -> np.ndarray:
    # periodic Hann, so that shifted copies tile exactly at 50% overlap
    return _hann_cached(n)


@lru_cache(maxsize=32)
def _ls_synthesis(win_len: int, hop: int) -> np.ndarray:
    w = _hann(win_len)
    denom = np.zeros(hop)
    for k in range(win_len // hop):
        denom += w[k * hop:(k + 1) * hop] ** 2
    ws = w / np.tile(denom, win_len // hop)
    ws.setflags(write=False)
    return ws


@dataclass
class ComplexSpectrogram:
    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2:
            raise ShapeError(f"spectrogram must be frames x bins, got shape {self.data.shape}")
        if self.data.shape[1] != self.config.n_bins:
            raise ShapeError(
                f"spectrogram has {self.data.shape[1]} bins, config implies {self.config.n_bins}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]


def frame_signal(signal: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Causally padded frames, shape (frames, win_len)."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a mono sample sequence, got shape {x.shape}")
    n = cfg.n_frames(len(x))
    if n == 0:
        return np.zeros((0, cfg.win_len))
    total = (n - 1) * cfg.hop + cfg.win_len
    xp = np.zeros(total)
    xp[cfg.pad:cfg.pad + len(x)] = x
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.win_len)[:: cfg.hop]
    return np.array(frames)


def stft(signal, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    cfg = cfg or StftConfig()
    x = np.asarray(signal, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite samples")
    frames = frame_signal(x, cfg)
    if frames.shape[0] == 0:
        return ComplexSpectrogram(np.zeros((0, cfg.n_bins), dtype=np.complex128), cfg)
    spec = np.fft.rfft(frames * cfg.analysis_window(), n=cfg.fft_len, axis=-1)
    return ComplexSpectrogram(spec, cfg)


def overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    n, width = frames.shape
    if n == 0:
        return np.zeros(0)
    out = np.zeros((n - 1) * hop + width)
    for k in range(width // hop):
        seg = frames[:, k * hop:(k + 1) * hop]
        out[k * hop:k * hop + n * hop] += seg.reshape(-1)
    return out


def istft(spec: ComplexSpectrogram, cfg: StftConfig | None = None, length: int | None = None) -> np.ndarray:
    """Least-squares overlap-add synthesis; inverse of :func:`stft` for the same geometry.

    The returned signal has ``n_frames * hop`` samples unless ``length`` is given.
    """
    cfg = cfg or spec.config
    if spec.config.geometry() != cfg.geometry():
        raise ConfigMismatchError(
            f"spectrogram geometry {spec.config.geometry()} does not match {cfg.geometry()}"
        )
    n = spec.n_frames
    if n == 0:
        out = np.zeros(0)
    else:
        frames = np.fft.irfft(spec.data, n=cfg.fft_len, axis=-1)[:, : cfg.win_len]
        out = overlap_add(frames * cfg.synthesis_window(), cfg.hop)[cfg.pad:]
    if length is not None:
        if length <= len(out):
            out = out[:length]
        else:
            out = np.concatenate([out, np.zeros(length - len(out))])
    return out


def algorithmic_latency_ms(cfg: StftConfig) -> float:
    return float(algorithmic_latency_exact(cfg))


def algorithmic_latency_exact(cfg: StftConfig) -> Fraction:
    return Fraction(1000 * (cfg.win_len + cfg.lookahead_frames * cfg.hop), cfg.sample_rate)


# --------------------------------------------------------------------------
# Filterbanks
# --------------------------------------------------------------------------


def hz_to_erb(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


_SCALES = {"erb": (hz_to_erb, erb_to_hz), "mel": (hz_to_mel, mel_to_hz)}


@dataclass
class Filterbank:
    kind: str
    matrix: np.ndarray
    band_edges: np.ndarray
    centers: np.ndarray

    @property
    def n_bands(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_bins(self) -> int:
        return self.matrix.shape[1]


def _center_bins(n_bands: int, n_bins: int, sample_rate: int, kind: str) -> np.ndarray:
    fwd, inv = _SCALES[kind]
    nyq = sample_rate / 2
    warped = np.linspace(fwd(0.0), fwd(nyq), n_bands)
    pos = inv(warped) / nyq * (n_bins - 1)
    idx = np.rint(pos).astype(int)
    idx[0] = 0
    # snap to distinct bins: push up from the bottom, then down from the top
    for i in range(1, n_bands):
        idx[i] = max(idx[i], idx[i - 1] + 1)
    idx[-1] = n_bins - 1
    for i in range(n_bands - 2, -1, -1):
        idx[i] = min(idx[i], idx[i + 1] - 1)
    return idx


def build_filterbank(kind: str, n_bands: int, cfg: StftConfig | None = None) -> Filterbank:
    """Triangular bands with centers evenly spaced on the ERB or Mel scale.

    Each band is a hat function between its neighbours' centers, so every FFT bin
    is shared by at most two adjacent bands and the columns sum to one.
    """
    cfg = cfg or StftConfig()
    kind = kind.lower()
    if kind not in _SCALES:
        raise ValueError(f"unknown filterbank kind {kind!r}; expected 'erb' or 'mel'")
    n_bins = cfg.n_bins
    if not 1 <= n_bands <= n_bins:
        raise ValueError(f"n_bands must be in [1, {n_bins}], got {n_bands}")
    bin_hz = cfg.sample_rate / cfg.fft_len
    if n_bands == 1:
        matrix = np.ones((1, n_bins))
        centers_hz = np.array([0.0])
    else:
        c = _center_bins(n_bands, n_bins, cfg.sample_rate, kind)
        bins = np.arange(n_bins)
        matrix = np.zeros((n_bands, n_bins))
        for b in range(n_bands):
            if b > 0:
                lo = c[b - 1]
                sel = (bins > lo) & (bins <= c[b])
                matrix[b, sel] = (bins[sel] - lo) / (c[b] - lo)
            else:
                matrix[b, bins <= c[0]] = 1.0
            if b < n_bands - 1:
                hi = c[b + 1]
                sel = (bins > c[b]) & (bins < hi)
                matrix[b, sel] = (hi - bins[sel]) / (hi - c[b])
            else:
                matrix[b, bins >= c[b]] = 1.0
        centers_hz = c * bin_hz
    matrix = matrix / matrix.sum(axis=0, keepdims=True)
    nyq = cfg.sample_rate / 2
    mids = (centers_hz[:-1] + centers_hz[1:]) / 2
    edges = np.concatenate([[0.0], mids, [nyq]])
    return Filterbank(kind=kind, matrix=matrix, band_edges=edges, centers=centers_hz)


def apply_filterbank(fb: Filterbank, magnitude_spec) -> np.ndarray:
    m = np.asarray(magnitude_spec, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != fb.n_bins:
        raise ShapeError(f"expected frames x {fb.n_bins} magnitudes, got shape {m.shape}")
    return m @ fb.matrix.T


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

TAPS_PER_PHASE = 64
KAISER_BETA = 8.6
ROLLOFF = 0.95


def _check_rate(rate) -> int:
    if int(rate) != rate or int(rate) not in SUPPORTED_RATES:
        raise UnsupportedRateError(
            f"unsupported sample rate {rate}; supported rates are {list(SUPPORTED_RATES)}"
        )
    return int(rate)


@lru_cache(maxsize=64)
def _phase_table(up: int, down: int) -> np.ndarray:
    """(up, TAPS_PER_PHASE) windowed-sinc weights, each phase normalized to unit DC gain."""
    half = TAPS_PER_PHASE // 2
    fc = ROLLOFF * min(1.0, up / down)
    offsets = np.arange(-half + 1, half + 1)  # input taps relative to floor(position)
    frac = np.arange(up) / up
    t = offsets[None, :] - frac[:, None]
    # Kaiser window evaluated continuously at the fractional tap positions
    arg = np.clip(1.0 - (t / half) ** 2, 0.0, None)
    h = np.sinc(fc * t) * np.i0(KAISER_BETA * np.sqrt(arg)) / np.i0(KAISER_BETA)
    h /= h.sum(axis=1, keepdims=True)
    h.setflags(write=False)
    return h


def resample(signal, from_rate: int, to_rate: int) -> np.ndarray:
    """Kaiser-windowed-sinc polyphase resampler between the supported rates.

    Output length is ``round(len * to_rate / from_rate)``; edges are extended by
    replication so constant signals are preserved everywhere.
    """
    from_rate = _check_rate(from_rate)
    to_rate = _check_rate(to_rate)
    x = np.asarray(signal, dtype=np.float64)
    if from_rate == to_rate:
        return x.copy()
    g = math.gcd(from_rate, to_rate)
    up, down = to_rate // g, from_rate // g
    n_out = int(round(len(x) * to_rate / from_rate))
    if n_out == 0 or len(x) == 0:
        return np.zeros(n_out)
    table = _phase_table(up, down)
    half = TAPS_PER_PHASE // 2
    xp = np.pad(x, (half, half + 1), mode="edge")
    offsets = np.arange(-half + 1, half + 1)
    out = np.empty(n_out)
    block = max(1, 2 ** 18 // TAPS_PER_PHASE)
    for start in range(0, n_out, block):
        m = np.arange(start, min(n_out, start + block))
        num = m * down
        base = num // up
        phase = num % up
        idx = base[:, None] + offsets[None, :] + half
        out[start:start + len(m)] = np.einsum("ij,ij->i", xp[idx], table[phase])
    return out
