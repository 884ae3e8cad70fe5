"""Multi-scale waveform discriminator in the MelGAN style."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeError
from ..nn import autograd as ag
from ..nn.autograd import Tensor
from ..nn.layers import Conv1d, Module


@dataclass(frozen=True)
class DiscriminatorConfig:
    n_scales: int = 3
    channels: tuple = (4, 8, 16)
    first_kernel: int = 15
    down_kernel: int = 21
    down_stride: int = 4
    down_groups: tuple = (2, 4)
    post_kernel: int = 5
    weight_norm: bool = True
    slope: float = 0.2
    seed: int = 2

    def __post_init__(self):
        if self.n_scales != 3:
            raise ValueError("the discriminator uses exactly three scales")
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "down_groups", tuple(self.down_groups))
        if len(self.down_groups) != len(self.channels) - 1:
            raise ValueError("need one group count per downsampling layer")

    def to_dict(self) -> dict:
        return asdict(self)


class ScaleDiscriminator(Module):
    def __init__(self, cfg: DiscriminatorConfig, rng: np.random.Generator):
        wn = cfg.weight_norm
        ch = cfg.channels
        self._slope = cfg.slope
        self.layers = [Conv1d(1, ch[0], cfg.first_kernel, rng, weight_norm=wn)]
        for c_in, c_out, g in zip(ch[:-1], ch[1:], cfg.down_groups):
            self.layers.append(Conv1d(c_in, c_out, cfg.down_kernel, rng, stride=cfg.down_stride,
                                      groups=g, padding=((cfg.down_kernel - 1) // 2,) * 2, weight_norm=wn))
        self.layers.append(Conv1d(ch[-1], ch[-1], cfg.post_kernel, rng, weight_norm=wn))
        self.out = Conv1d(ch[-1], 1, 3, rng, weight_norm=wn)

    def min_length(self) -> int:
        """Smallest input length producing at least one score."""
        n = 1
        while not self._valid(n):
            n += 1
        return n

    def _valid(self, n: int) -> bool:
        for layer in self.layers + [self.out]:
            if n + sum(layer.pad) < layer.kernel:
                return False
            n = layer.output_length(n)
            if n < 1:
                return False
        return True

    def __call__(self, x: Tensor) -> Tensor:
        h = x.reshape(x.shape[0], x.shape[1], 1)
        for layer in self.layers:
            h = ag.leaky_relu(layer(h), self._slope)
        return self.out(h).reshape(x.shape[0], -1)


class Discriminator(Module):
    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        rng = np.random.default_rng(cfg.seed)
        self._cfg = cfg
        self.scales = [ScaleDiscriminator(cfg, rng) for _ in range(cfg.n_scales)]

    @property
    def config(self) -> DiscriminatorConfig:
        return self._cfg

    def min_length(self) -> int:
        need = 1
        for level, d in enumerate(self.scales):
            need = max(need, d.min_length() * 2 ** level)
        return need

    def __call__(self, waveform) -> list[Tensor]:
        """(B, L) or (L,) waveform -> one (B, n_l) score sequence per scale."""
        x = ag.as_tensor(waveform)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] < self.min_length():
            raise ShapeError(f"waveform of length {x.shape[1]} is shorter than the minimum {self.min_length()}",
                             "Discriminator")
        scores = []
        for level, d in enumerate(self.scales):
            if level:
                x = ag.avg_pool2(x)
            scores.append(d(x))
        return scores
