"""Stage-1 predictive enhancer: ERB-gain envelope path plus a deep-filter periodicity path.

A simplified DeepFilterNet2-style network: one encoder over ERB and low-band
complex features feeding two decoders, one emitting ERB gains and one emitting
deep-filter coefficients. The network itself is strictly causal; the deep
filter reaches ``df_lookahead`` frames ahead, so the stage emits frame ``k`` once
frame ``k + lookahead`` has been consumed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..dsp import StftConfig, build_filterbank
from ..errors import ConfigMismatchError, ShapeError
from ..nn import autograd as ag
from ..nn.autograd import Tensor
from ..nn.layers import GRU, GroupedLinear, Linear, Module, TimeFreqConv
from .deepfilter import deep_filter_tensor


@dataclass(frozen=True)
class Stage1Config:
    erb_bands: int = 32
    df_order: int = 5
    df_lookahead: int = 2
    df_max_hz: float = 5000.0
    conv_channels: int = 16
    conv_kt: int = 2
    conv_kf: int = 3
    emb: int = 64
    gru_hidden: int = 64
    groups: int = 8
    df_channels: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.df_order < 1:
            raise ValueError("df_order must be >= 1")
        if not 0 <= self.df_lookahead < self.df_order:
            raise ValueError("df_lookahead must be in [0, df_order - 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def spec_scale(stft_cfg: StftConfig) -> float:
    """Factor mapping raw STFT values to sinusoid amplitude units."""
    return 2.0 / float(np.sum(stft_cfg.analysis_window()))


def df_bin_count(cfg: Stage1Config, stft_cfg: StftConfig) -> int:
    bin_hz = stft_cfg.sample_rate / stft_cfg.fft_len
    return int(min(stft_cfg.n_bins, np.ceil(cfg.df_max_hz / bin_hz)))


class Stage1(Module):
    def __init__(self, cfg: Stage1Config = Stage1Config(), stft_cfg: StftConfig = StftConfig()):
        if cfg.df_lookahead > stft_cfg.lookahead_frames:
            raise ConfigMismatchError("df_lookahead exceeds the STFT lookahead budget")
        rng = np.random.default_rng(cfg.seed)
        self._cfg = cfg
        self._stft = stft_cfg
        self._delay = stft_cfg.lookahead_frames
        self._scale = spec_scale(stft_cfg)
        fb = build_filterbank("erb", cfg.erb_bands, stft_cfg)
        self._erb = fb.matrix
        self._df_bins = df_bin_count(cfg, stft_cfg)
        c, e, h, g = cfg.conv_channels, cfg.emb, cfg.gru_hidden, cfg.groups
        self.erb_conv = TimeFreqConv(1, c, cfg.conv_kt, cfg.conv_kf, rng)
        self.df_conv = TimeFreqConv(2, c, cfg.conv_kt, cfg.conv_kf, rng)
        self.erb_fc = GroupedLinear(cfg.erb_bands * c, e, g, rng)
        self.df_fc = GroupedLinear(self._df_bins * c, e, g, rng)
        self.enc_gru = GRU(e, h, rng)
        self.gain_out = Linear(h, cfg.erb_bands, rng)
        self.df_gru = GRU(h, h, rng)
        self.df_fc_out = GroupedLinear(h, self._df_bins * cfg.df_channels, g, rng)
        self.df_coef = Linear(cfg.df_channels, cfg.df_order * 2, rng)
        # test/bypass hooks: fixed ERB gains and/or an identity deep filter
        self.force_gains: float | None = None
        self.force_identity_df = False

    @property
    def config(self) -> Stage1Config:
        return self._cfg

    @property
    def stft_config(self) -> StftConfig:
        return self._stft

    @property
    def delay_frames(self) -> int:
        return self._delay

    @property
    def df_bins(self) -> int:
        return self._df_bins

    def initial_state(self, batch: int = 1) -> dict:
        cfg = self._cfg
        n_bins = self._stft.n_bins
        hist = cfg.df_order - 1 + self._delay - cfg.df_lookahead
        return {
            "erb_ctx": self.erb_conv.initial_context(batch, cfg.erb_bands),
            "df_ctx": self.df_conv.initial_context(batch, self._df_bins),
            "enc_h": self.enc_gru.initial_state(batch),
            "df_h": self.df_gru.initial_state(batch),
            "spec_hist": np.zeros((batch, hist, n_bins, 2)),
            "noisy_hist": np.zeros((batch, self._delay, n_bins, 2)),
            "steps": 0,
        }

    def _check_state(self, state: dict, batch: int) -> None:
        if state["enc_h"].shape != (batch, self._cfg.gru_hidden) or state["spec_hist"].shape[2] != self._stft.n_bins:
            raise ConfigMismatchError("stream state does not match this stage-1 configuration")

    def network(self, spec: Tensor, state: dict) -> tuple[Tensor, Tensor, dict]:
        """ERB gains (B, T, bands) and deep-filter coefficients (B, T, df_bins, order, 2)."""
        cfg = self._cfg
        ys = spec * self._scale
        power = ag.square(ys).sum(axis=-1)  # (B, T, F)
        erb = ag.einsum("btf,ef->bte", power, self._erb)
        feat_erb = (ag.log(erb + 1e-10) * (1.0 / np.log(10.0)) + 5.0) * 0.2
        low = ys[:, :, : self._df_bins]
        feat_df = low * ag.power(power[:, :, : self._df_bins] + 1e-6, -0.35).reshape(
            power.shape[0], power.shape[1], self._df_bins, 1)

        x_erb, erb_ctx = self.erb_conv(feat_erb.reshape(feat_erb.shape + (1,)), state["erb_ctx"])
        x_df, df_ctx = self.df_conv(feat_df, state["df_ctx"])
        b, t = x_erb.shape[:2]
        x_erb = ag.relu(x_erb).reshape(b, t, -1)
        x_df = ag.relu(x_df).reshape(b, t, -1)
        emb = ag.relu(self.erb_fc(x_erb) + self.df_fc(x_df))
        enc, enc_h = self.enc_gru(emb, state["enc_h"])
        gains = ag.sigmoid(self.gain_out(enc))
        dec, df_h = self.df_gru(enc, state["df_h"])
        c = ag.relu(self.df_fc_out(dec)).reshape(b, t, self._df_bins, cfg.df_channels)
        coefs = self.df_coef(c).reshape(b, t, self._df_bins, cfg.df_order, 2)
        ident = np.zeros((cfg.df_order, 2))
        ident[cfg.df_lookahead, 0] = 1.0
        coefs = coefs + ident
        new_state = dict(state, erb_ctx=erb_ctx, df_ctx=df_ctx, enc_h=enc_h, df_h=df_h)
        return gains, coefs, new_state

    def __call__(self, spec, state: dict | None = None) -> tuple[Tensor, Tensor, dict]:
        """Process a chunk of frames.

        ``spec`` is (B, T, F, 2). Returns ``(z, y_aligned, state)`` where output
        position ``c`` is frame ``steps + c - delay`` of the stream; positions that
        map to negative frames are warm-up output and are dropped by the caller.
        ``y_aligned`` is the noisy input delayed to match ``z``.
        """
        spec = ag.as_tensor(spec)
        if spec.ndim != 4 or spec.shape[2] != self._stft.n_bins or spec.shape[3] != 2:
            raise ShapeError(f"expected (B, T, {self._stft.n_bins}, 2), got {spec.shape}", "Stage1")
        b, t = spec.shape[:2]
        state = self.initial_state(b) if state is None else state
        self._check_state(state, b)
        cfg = self._cfg
        gains, coefs, state = self.network(spec, state)
        if self.force_gains is not None:
            gains = Tensor(np.full(gains.shape, float(self.force_gains)))
        if self.force_identity_df:
            ident = np.zeros(coefs.shape)
            ident[..., cfg.df_lookahead, 0] = 1.0
            coefs = Tensor(ident)
        bin_gains = ag.einsum("bte,ef->btf", gains, self._erb)
        enhanced = spec * bin_gains.reshape(b, t, -1, 1)

        full = ag.concat([Tensor(state["spec_hist"]), enhanced], axis=1)
        n_hist = state["spec_hist"].shape[1]
        order = cfg.df_order
        low = ag.transpose(full[:, :, : self._df_bins], (0, 2, 3, 1))  # (B, F, 2, T')
        win = ag.unfold(low, order, 1)  # (B, F, 2, T, order), window w = frame k + la - (order-1) + w
        win = ag.transpose(win, (0, 3, 1, 4, 2))[:, :, :, ::-1]  # (B, T, F, order(i), 2)
        z_low = deep_filter_tensor(coefs, win)
        shift = n_hist - self._delay
        z_high = full[:, shift:shift + t, self._df_bins:]
        z = ag.concat([z_low, z_high], axis=2)

        noisy_full = ag.concat([Tensor(state["noisy_hist"]), spec], axis=1) if self._delay else spec
        y_aligned = noisy_full[:, :t]
        new_state = dict(state)
        new_state["spec_hist"] = np.array(full.data[:, full.shape[1] - n_hist:]) if n_hist else state["spec_hist"]
        if self._delay:
            new_state["noisy_hist"] = np.array(noisy_full.data[:, noisy_full.shape[1] - self._delay:])
        new_state["steps"] = state["steps"] + t
        self._last_gains = gains
        return z, y_aligned, new_state

    def run_offline(self, spec) -> tuple[Tensor, Tensor]:
        """Whole-utterance processing: (B, T, F, 2) -> (z, y) both (B, T, F, 2), frame aligned."""
        spec = ag.as_tensor(spec)
        d = self._delay
        padded = ag.pad(spec, [(0, 0), (0, d), (0, 0), (0, 0)]) if d else spec
        z, y, _ = self(padded)
        return z[:, d:], y[:, d:]
