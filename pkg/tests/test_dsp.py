from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regen_stream.dsp import (ComplexSpectrogram, StftConfig, algorithmic_latency_exact, algorithmic_latency_ms,
                              apply_filterbank, build_filterbank, istft, resample, stft)
from regen_stream.errors import ConfigMismatchError, ShapeError, UnsupportedRateError

CFG = StftConfig()
SUPPORTED = (8000, 16000, 22050, 24000, 32000, 44100, 48000)


def interior(x: np.ndarray, cfg: StftConfig = CFG) -> slice:
    return slice(cfg.win_len, len(x) - cfg.win_len)


# -- stft -------------------------------------------------------------------


def test_dc_energy_in_bin_zero():
    spec = stft(np.ones(960), CFG).data
    # frame 1 is the first frame fully covered by the signal
    full = spec[1]
    assert np.isclose(abs(full[0]), np.sum(CFG.analysis_window()), rtol=1e-12)
    # periodic Hann leaks into bin 1 only
    assert np.max(np.abs(full[2:])) < 1e-9


def test_zero_signal_zero_spectrum():
    spec = stft(np.zeros(4800), CFG)
    assert spec.data.shape == (CFG.n_frames(4800), 481)
    assert not np.any(spec.data)


def test_empty_signal_gives_empty_spectrogram():
    assert stft(np.zeros(0), CFG).data.shape == (0, 481)


def test_sine_peaks_at_aligned_bin():
    n = np.arange(960)
    x = np.sin(2 * np.pi * 2500 * n / 48000)
    spec = stft(x, CFG).data
    assert int(np.argmax(np.abs(spec[1]))) == 50


def test_frame_count_formula():
    for n in (1, 479, 480, 481, 960, 4807):
        assert stft(np.ones(n), CFG).data.shape[0] == -(-(n + CFG.pad) // CFG.hop)


def test_linearity(rng):
    x, y = rng.standard_normal(4000), rng.standard_normal(4000)
    lhs = stft(2.5 * x - 0.7 * y, CFG).data
    rhs = 2.5 * stft(x, CFG).data - 0.7 * stft(y, CFG).data
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_parseval_per_frame(rng):
    x = rng.standard_normal(9600)
    spec = stft(x, CFG).data
    padded = np.concatenate([np.zeros(CFG.pad), x, np.zeros(CFG.hop)])
    w = CFG.analysis_window()
    frames = np.array([padded[k * CFG.hop:k * CFG.hop + CFG.win_len] * w for k in range(spec.shape[0])])
    time_energy = np.sum(frames ** 2)
    # one-sided spectrum: double every bin but DC and Nyquist
    weights = np.full(CFG.n_bins, 2.0)
    weights[0] = weights[-1] = 1.0
    spec_energy = np.sum(weights * np.abs(spec) ** 2) / CFG.fft_len
    assert abs(time_energy - spec_energy) / time_energy < 1e-6


# -- istft ------------------------------------------------------------------


def test_roundtrip_white_noise(rng):
    x = rng.standard_normal(48000)
    y = istft(stft(x, CFG), CFG, len(x))
    sl = interior(x)
    assert np.linalg.norm(y[sl] - x[sl]) / np.linalg.norm(x[sl]) <= 1e-6


def test_roundtrip_sine_max_error():
    n = np.arange(48000)
    x = np.sin(2 * np.pi * 2500 * n / 48000)
    y = istft(stft(x, CFG), CFG, len(x))
    assert np.max(np.abs(y - x)) <= 1e-6


def test_zero_spectrogram_gives_zero_signal():
    spec = ComplexSpectrogram(np.zeros((10, 481), dtype=complex), CFG)
    assert not np.any(istft(spec, CFG))


def test_istft_rejects_mismatched_config(rng):
    spec = stft(rng.standard_normal(2000), CFG)
    with pytest.raises(ConfigMismatchError):
        istft(spec, StftConfig(fft_len=480, hop=240))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6000), st.sampled_from([(960, 480), (480, 240), (64, 16)]))
def test_cola_property(seed, n, geom):
    cfg = StftConfig(fft_len=geom[0], hop=geom[1])
    x = np.random.default_rng(seed).standard_normal(n)
    y = istft(stft(x, cfg), cfg, n)
    # with causal zero pre-padding every sample is covered by full overlap
    assert len(y) == n
    assert np.linalg.norm(y - x) <= 1e-9 * max(np.linalg.norm(x), 1.0)


def test_config_invariants():
    with pytest.raises(ValueError):
        StftConfig(fft_len=960, hop=500)
    with pytest.raises(ValueError):
        StftConfig(lookahead_frames=-1)
    with pytest.raises(ValueError):
        StftConfig(window="hamming")


# -- resample ---------------------------------------------------------------


def test_resample_identity_is_bit_exact(rng):
    x = rng.standard_normal(1000)
    assert np.array_equal(resample(x, 48000, 48000), x)


@pytest.mark.parametrize("src,dst", [(16000, 48000), (44100, 48000), (48000, 8000), (22050, 32000)])
def test_resample_length(src, dst, rng):
    x = rng.standard_normal(1234)
    assert len(resample(x, src, dst)) == round(1234 * dst / src)


def test_resample_roundtrip_snr():
    n = np.arange(16000)
    x = np.sin(2 * np.pi * 1000 * n / 16000)
    y = resample(resample(x, 16000, 48000), 48000, 16000)
    sl = slice(200, -200)
    snr = 10 * np.log10(np.sum(x[sl] ** 2) / np.sum((x[sl] - y[sl]) ** 2))
    assert snr >= 60.0


@pytest.mark.parametrize("src,dst", [(8000, 48000), (48000, 16000), (44100, 22050), (24000, 32000)])
def test_resample_preserves_dc(src, dst):
    y = resample(np.full(4000, 0.3), src, dst)
    sl = slice(100, -100)
    assert np.max(np.abs(y[sl] - 0.3)) <= 1e-4


def test_resample_rejects_unsupported_rate():
    with pytest.raises(UnsupportedRateError) as exc:
        resample(np.zeros(10), 11025, 48000)
    assert "16000" in str(exc.value)


# -- filterbanks ------------------------------------------------------------


def test_erb_filterbank_shape_and_normalization():
    fb = build_filterbank("erb", 32, CFG)
    assert fb.matrix.shape == (32, 481)
    assert np.allclose(fb.matrix.sum(axis=0), 1.0, atol=1e-6)
    assert np.all(fb.matrix >= 0)
    assert np.all(np.diff(fb.band_edges) > 0)
    assert np.all((fb.matrix > 0).sum(axis=0) >= 1)


def test_full_resolution_bank_is_near_identity():
    fb = build_filterbank("erb", 481, CFG)
    assert np.array_equal(fb.matrix, np.eye(481))


def test_mel_two_bands_edges_monotone():
    fb = build_filterbank("mel", 2, CFG)
    assert np.all(np.diff(fb.band_edges) > 0)


@pytest.mark.parametrize("n", [0, 482])
def test_filterbank_rejects_band_count(n):
    with pytest.raises(ValueError):
        build_filterbank("erb", n, CFG)


def test_apply_filterbank_oracles(rng):
    fb = build_filterbank("mel", 20, CFG)
    assert not np.any(apply_filterbank(fb, np.zeros((3, 481))))
    ones = apply_filterbank(fb, np.ones((1, 481)))
    assert np.allclose(ones[0], fb.matrix.sum(axis=1), atol=1e-12)
    impulse = np.zeros((1, 481))
    impulse[0, 77] = 1.0
    assert np.array_equal(apply_filterbank(fb, impulse)[0], fb.matrix[:, 77])
    m = rng.random((5, 481))
    assert np.allclose(apply_filterbank(fb, m), np.einsum("tf,bf->tb", m, fb.matrix), atol=1e-12)
    with pytest.raises(ShapeError):
        apply_filterbank(fb, np.ones((2, 480)))


# -- latency ----------------------------------------------------------------


def test_latency_default_is_exactly_40ms():
    assert algorithmic_latency_exact(CFG) == Fraction(40)
    assert algorithmic_latency_ms(CFG) == 40.0


@pytest.mark.parametrize("fft,hop,la,expected", [(960, 480, 0, 20.0), (480, 240, 2, 20.0), (960, 480, 1, 30.0)])
def test_latency_formula(fft, hop, la, expected):
    assert algorithmic_latency_ms(StftConfig(fft_len=fft, hop=hop, lookahead_frames=la)) == expected
