"""Stage-2 generator: two-channel (noisy, intermediate) spectrogram in, enhanced spectrogram out.

Each block applies three residual sub-layers to a (B, T, F, hidden) tensor:
a convolution along frequency, a causal selective SSM along time (per bin) and a
grouped linear map mixing frequency bins.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..dsp import StftConfig
from ..errors import ConfigMismatchError, ShapeError
from ..nn import autograd as ag
from ..nn.autograd import Tensor
from ..nn.layers import Conv1d, Linear, Module, Parameter, kaiming_uniform
from .ssm import SelectiveSSM
from .stage1 import spec_scale


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 2
    blocks: int = 4
    hidden: int = 16
    state_dim: int = 8
    freq_kernel: int = 5
    freq_groups: int = 13
    mix_heads: int = 1
    weight_norm: bool = True
    init: str = "copy_z"
    seed: int = 1

    def __post_init__(self):
        if self.in_channels != 2:
            raise ValueError("the generator takes exactly two input channels (noisy, intermediate)")
        if self.init not in ("copy_z", "kaiming"):
            raise ValueError("init must be 'copy_z' or 'kaiming'")
        if self.hidden < 2:
            raise ValueError("hidden must be >= 2")
        if self.hidden % self.mix_heads:
            raise ValueError("mix_heads must divide hidden")

    def to_dict(self) -> dict:
        return asdict(self)


class GeneratorBlock(Module):
    def __init__(self, cfg: GeneratorConfig, n_bins: int, rng: np.random.Generator):
        h, wn = cfg.hidden, cfg.weight_norm
        self.freq_in = Conv1d(h, h, cfg.freq_kernel, rng, weight_norm=wn)
        self.freq_out = Conv1d(h, h, 1, rng, weight_norm=wn)
        self.ssm = SelectiveSSM(h, cfg.state_dim, rng, weight_norm=wn)
        # block-diagonal bin-mixing matrices, one per head of hidden // mix_heads channels
        gi = n_bins // cfg.freq_groups
        self._heads, self._groups = cfg.mix_heads, cfg.freq_groups
        self.mix = Parameter(kaiming_uniform(rng, (cfg.mix_heads, cfg.freq_groups, gi, gi), gi))

    def zero_branches(self) -> None:
        """Make every residual branch output zero so the block is an identity map."""
        self.freq_out.set_weight(np.zeros((self.freq_out.out_ch, self.freq_out.in_ch, 1)))
        self.freq_out.bias.data[:] = 0.0
        self.ssm.w_c.set_weight(np.zeros((self.ssm.hidden, self.ssm.state_dim)))
        self.ssm.d.data[:] = 0.0
        self.mix.data[:] = 0.0

    def __call__(self, x: Tensor, h0: np.ndarray) -> tuple[Tensor, np.ndarray]:
        b, t, f, h = x.shape
        # frequency convolution, applied per frame
        xf = x.reshape(b * t, f, h)
        x = x + self.freq_out(ag.relu(self.freq_in(xf))).reshape(b, t, f, h)
        # selective SSM over time, one sequence per (batch, bin)
        xs = ag.transpose(x, (0, 2, 1, 3)).reshape(b * f, t, h)
        ys, h_last = self.ssm(xs, h0)
        x = x + ag.transpose(ys.reshape(b, f, t, h), (0, 2, 1, 3))
        # frequency mixing
        m, g = self._heads, self._groups
        xm = ag.transpose(x, (0, 1, 3, 2)).reshape(b, t, m, h // m, g, f // g)
        ym = ag.einsum("btmcgi,mgio->btmcgo", xm, self.mix).reshape(b, t, h, f)
        x = x + ag.transpose(ym, (0, 1, 3, 2))
        return x, h_last


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(), stft_cfg: StftConfig = StftConfig()):
        n_bins = stft_cfg.n_bins
        if n_bins % cfg.freq_groups:
            raise ConfigMismatchError(f"freq_groups={cfg.freq_groups} must divide the bin count {n_bins}")
        rng = np.random.default_rng(cfg.seed)
        self._cfg = cfg
        self._stft = stft_cfg
        self._scale = spec_scale(stft_cfg)
        self.enc = Linear(2 * cfg.in_channels, cfg.hidden, rng, weight_norm=cfg.weight_norm)
        self.blocks = [GeneratorBlock(cfg, n_bins, rng) for _ in range(cfg.blocks)]
        self.dec = Linear(cfg.hidden, 2, rng, weight_norm=cfg.weight_norm)
        if cfg.init == "copy_z":
            self.init_copy_z()

    @property
    def config(self) -> GeneratorConfig:
        return self._cfg

    def init_copy_z(self) -> None:
        """Route the intermediate channel straight to the output; blocks start as identities."""
        w_in = self.enc.effective_weight.data.copy()
        w_in[0] = [0.0, 0.0, 1.0, 0.0]
        w_in[1] = [0.0, 0.0, 0.0, 1.0]
        self.enc.set_weight(w_in)
        self.enc.bias.data[:2] = 0.0
        w_out = np.zeros((2, self._cfg.hidden))
        w_out[0, 0] = 1.0
        w_out[1, 1] = 1.0
        self.dec.set_weight(w_out)
        self.dec.bias.data[:] = 0.0
        for blk in self.blocks:
            blk.zero_branches()

    def initial_state(self, batch: int = 1) -> dict:
        n = batch * self._stft.n_bins
        return {"ssm": [np.zeros((n, self._cfg.state_dim)) for _ in self.blocks]}

    def __call__(self, noisy, intermediate, state: dict | None = None) -> tuple[Tensor, dict]:
        """(B, T, F, 2) noisy and intermediate spectra -> enhanced spectrum (B, T, F, 2)."""
        noisy, intermediate = ag.as_tensor(noisy), ag.as_tensor(intermediate)
        if noisy.shape != intermediate.shape:
            raise ShapeError(f"noisy {noisy.shape} and intermediate {intermediate.shape} differ", "Generator")
        if noisy.ndim != 4 or noisy.shape[2] != self._stft.n_bins or noisy.shape[3] != 2:
            raise ShapeError(f"expected (B, T, {self._stft.n_bins}, 2), got {noisy.shape}", "Generator")
        b = noisy.shape[0]
        state = self.initial_state(b) if state is None else state
        if len(state["ssm"]) != len(self.blocks) or state["ssm"][0].shape[0] != b * self._stft.n_bins:
            raise ConfigMismatchError("stream state does not match this generator configuration")
        x = ag.concat([noisy, intermediate], axis=-1) * self._scale
        x = self.enc(x)
        new_h = []
        for blk, h0 in zip(self.blocks, state["ssm"]):
            x, h_last = blk(x, h0)
            new_h.append(h_last)
        out = self.dec(x) * (1.0 / self._scale)
        return out, {"ssm": new_h}
