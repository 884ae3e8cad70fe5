"""Training objectives for both stages.

Stage 1 uses a weighted sum of five regression terms computed on waveforms.
Stage 2 uses hinge objectives for the multi-scale discriminator and an
adversarial plus time-domain L1 objective for the generator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dsp import StftConfig, _hann, build_filterbank
from .errors import ShapeError
from .nn import autograd as ag
from .nn.autograd import Tensor
from .nn.spectral import frames_tensor, power_tensor, stft_tensor

STAGE1_TERMS = ("spectral", "multires", "local_snr", "si_sdr", "mel_l1")
SI_SDR_CAP = 50.0
_MAG_EPS = 1e-8


@dataclass(frozen=True)
class Stage1LossConfig:
    compression: float = 0.3
    weights: dict = field(default_factory=lambda: {
        "spectral": 1.0, "multires": 0.5, "local_snr": 0.05, "si_sdr": 0.2, "mel_l1": 1.0})
    multires_fft_sizes: tuple = (256, 512, 1024)
    local_snr_frame_ms: float = 20.0
    local_snr_range: tuple = (-15.0, 35.0)
    mel_bands: int = 80
    spectral_scale: str = "raw"
    stft: StftConfig = StftConfig()

    def __post_init__(self):
        if self.spectral_scale not in ("amplitude", "raw"):
            raise ValueError("spectral_scale must be 'amplitude' or 'raw'")
        if not 0.0 < self.compression <= 1.0:
            raise ValueError("compression must lie in (0, 1]")
        unknown = set(self.weights) - set(STAGE1_TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("loss weights must be non-negative")
        object.__setattr__(self, "weights", {k: float(self.weights.get(k, 0.0)) for k in STAGE1_TERMS})
        object.__setattr__(self, "multires_fft_sizes", tuple(int(n) for n in self.multires_fft_sizes))


@dataclass(frozen=True)
class GanLossConfig:
    beta: float = 100.0
    n_scales: int = 3
    margin: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass
class LossReport:
    """Named scalar loss terms, their weighted total and the differentiable total."""

    terms: dict
    total: float
    tensor: Tensor | None = None

    def to_record(self, **extra) -> dict:
        rec = dict(extra)
        rec.update({k: float(v) for k, v in self.terms.items()})
        rec["total"] = float(self.total)
        return rec

    def to_json(self, **extra) -> str:
        return json.dumps(self.to_record(**extra), sort_keys=True)


def _as_batch(x) -> Tensor:
    x = ag.as_tensor(x)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise ShapeError(f"expected (samples,) or (batch, samples), got {x.shape}", "loss")
    return x


def _check_pair(clean, estimate) -> tuple[Tensor, Tensor]:
    clean, estimate = _as_batch(clean), _as_batch(estimate)
    if clean.shape != estimate.shape:
        raise ShapeError(f"clean {clean.shape} and estimate {estimate.shape} differ in length", "loss")
    return clean, estimate


# -- stage-1 terms ----------------------------------------------------------


def _amp_stft(x: Tensor, n_fft: int, hop: int, scale: str = "amplitude") -> Tensor:
    w = _hann(n_fft)
    spec = stft_tensor(x, n_fft, hop, w)
    return spec * (2.0 / float(np.sum(w))) if scale == "amplitude" else spec


def compressed_spectral_loss(spec_x: Tensor, spec_y: Tensor, c: float) -> Tensor:
    """Magnitude and complex distances between power-law compressed spectra."""
    px, py = power_tensor(spec_x) + _MAG_EPS, power_tensor(spec_y) + _MAG_EPS
    mag = ag.square(ag.power(px, c / 2) - ag.power(py, c / 2)).mean()
    cx = spec_x * ag.power(px, (c - 1) / 2).reshape(px.shape + (1,))
    cy = spec_y * ag.power(py, (c - 1) / 2).reshape(py.shape + (1,))
    cplx = ag.square(cx - cy).sum(axis=-1).mean()
    return mag + cplx


def multires_loss(clean: Tensor, estimate: Tensor, sizes, scale: str = "amplitude") -> Tensor:
    total = None
    for n in sizes:
        mx = ag.sqrt(power_tensor(_amp_stft(clean, n, n // 2, scale)) + _MAG_EPS)
        my = ag.sqrt(power_tensor(_amp_stft(estimate, n, n // 2, scale)) + _MAG_EPS)
        term = ag.abs_(mx - my).mean()
        total = term if total is None else total + term
    return total


def local_snr_loss(clean: Tensor, estimate: Tensor, frame: int, lo: float, hi: float) -> Tensor:
    """MSE between framewise SNR of the estimate (vs its residual) and the clean-frame reference, in dB/10."""
    hop = frame // 2
    fe = frames_tensor(estimate, frame, hop, frame - hop)
    fr = frames_tensor(clean - estimate, frame, hop, frame - hop)
    fc = frames_tensor(clean, frame, hop, frame - hop)
    e_est = ag.square(fe).sum(axis=-1)
    e_res = ag.square(fr).sum(axis=-1)
    e_cln = np.sum(fc.data ** 2, axis=-1)
    eps = _MAG_EPS
    to_db = 10.0 / np.log(10.0)
    snr_est = ag.clip((ag.log(e_est + eps) - ag.log(e_res + eps)) * to_db, lo, hi)
    snr_ref = np.clip(10.0 * np.log10((e_cln + eps) / eps), lo, hi)
    return ag.square((snr_est - snr_ref) * 0.1).mean()


def si_sdr_tensor(reference: Tensor, estimate: Tensor) -> Tensor:
    """Per-item SI-SDR in dB, capped at +-50; smooth surrogate of :func:`regen_stream.eval.si_sdr`."""
    ref_e = ag.square(reference).sum(axis=-1, keepdims=True)
    alpha = (reference * estimate).sum(axis=-1, keepdims=True) / (ref_e + 1e-12)
    s = reference * alpha
    e = estimate - s
    num = ag.square(s).sum(axis=-1) + 1e-16 * ref_e.data[:, 0]
    den = ag.square(e).sum(axis=-1) + 1e-8 * ref_e.data[:, 0]
    ratio = (ag.log(num) - ag.log(den)) * (10.0 / np.log(10.0))
    return ag.clip(ratio, -SI_SDR_CAP, SI_SDR_CAP)


def mel_l1_loss(spec_x: Tensor, spec_y: Tensor, mel: np.ndarray) -> Tensor:
    mx = ag.sqrt(power_tensor(spec_x) + _MAG_EPS)
    my = ag.sqrt(power_tensor(spec_y) + _MAG_EPS)
    bx = ag.einsum("btf,mf->btm", mx, mel)
    by = ag.einsum("btf,mf->btm", my, mel)
    return ag.abs_(bx - by).mean()


_MEL_CACHE: dict = {}


def _mel_matrix(cfg: Stage1LossConfig) -> np.ndarray:
    key = (cfg.mel_bands, cfg.stft.geometry(), cfg.stft.sample_rate)
    if key not in _MEL_CACHE:
        _MEL_CACHE[key] = build_filterbank("mel", cfg.mel_bands, cfg.stft).matrix
    return _MEL_CACHE[key]


def stage1_loss(clean, estimate, cfg: Stage1LossConfig | None = None) -> LossReport:
    """Weighted composite loss over (B, L) or (L,) waveforms; averaged over the batch."""
    cfg = cfg or Stage1LossConfig()
    clean, estimate = _check_pair(clean, estimate)
    clean = Tensor(clean.data)  # the target never carries gradient
    w = cfg.weights
    st = cfg.stft
    terms: dict[str, Tensor] = {}
    needs_main = w["spectral"] > 0 or w["mel_l1"] > 0
    if needs_main:
        sx = _amp_stft(clean, st.fft_len, st.hop, cfg.spectral_scale)
        sy = _amp_stft(estimate, st.fft_len, st.hop, cfg.spectral_scale)
    if w["spectral"] > 0:
        terms["spectral"] = compressed_spectral_loss(sx, sy, cfg.compression)
    if w["multires"] > 0:
        terms["multires"] = multires_loss(clean, estimate, cfg.multires_fft_sizes, cfg.spectral_scale)
    if w["local_snr"] > 0:
        frame = int(round(cfg.local_snr_frame_ms * st.sample_rate / 1000.0))
        terms["local_snr"] = local_snr_loss(clean, estimate, frame, *cfg.local_snr_range)
    if w["si_sdr"] > 0:
        terms["si_sdr"] = -si_sdr_tensor(clean, estimate).mean()
    if w["mel_l1"] > 0:
        terms["mel_l1"] = mel_l1_loss(sx, sy, _mel_matrix(cfg))
    total = None
    for name, t in terms.items():
        part = t * w[name]
        total = part if total is None else total + part
    if total is None:
        total = Tensor(0.0)
    return LossReport({k: t.item() for k, t in terms.items()}, total.item(), total)


# -- stage-2 objectives -------------------------------------------------------


def _scores(seq) -> list[Tensor]:
    return [ag.as_tensor(s) for s in seq]


def hinge_discriminator_loss(real_scores, fake_scores, margin: float = 1.0) -> Tensor:
    real, fake = _scores(real_scores), _scores(fake_scores)
    if len(real) != len(fake):
        raise ShapeError("real and fake score lists differ in length", "hinge")
    total = Tensor(0.0)
    for r, f in zip(real, fake):
        total = total + ag.relu(margin - r).mean() + ag.relu(margin + f).mean()
    return total


def generator_adversarial_loss(fake_scores) -> Tensor:
    total = Tensor(0.0)
    for f in _scores(fake_scores):
        total = total - f.mean()
    return total


def generator_total_loss(adv, clean, enhanced, beta: float = 100.0) -> LossReport:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    clean, enhanced = _check_pair(clean, enhanced)
    adv = ag.as_tensor(adv)
    l1 = ag.abs_(Tensor(clean.data) - enhanced).mean()
    total = adv + l1 * beta
    return LossReport({"adversarial": adv.item(), "time_l1": l1.item()}, total.item(), total)
