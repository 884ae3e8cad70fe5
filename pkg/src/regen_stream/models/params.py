"""Parameter accounting for the three networks."""
from __future__ import annotations

from dataclasses import dataclass

from ..dsp import StftConfig
from ..nn.layers import Module
from .discriminator import DiscriminatorConfig
from .generator import GeneratorConfig
from .stage1 import Stage1Config


def count_params(graph: Module | dict | None) -> int:
    """Total number of parameter elements in a module or a name -> array mapping."""
    if graph is None:
        return 0
    if isinstance(graph, Module):
        return sum(p.size for _, p in graph.named_parameters())
    return sum(int(v.size) for v in graph.values())


def millions(n: int) -> str:
    return f"{n / 1e6:.2f}M"


@dataclass(frozen=True)
class ParamReport:
    stage1: int
    generator: int
    discriminator: int

    @property
    def train_total(self) -> int:
        return self.stage1 + self.generator + self.discriminator

    @property
    def infer_total(self) -> int:
        # the discriminator only exists during training
        return self.stage1 + self.generator

    def lines(self) -> list[str]:
        rows = [
            ("stage1", self.stage1),
            ("generator", self.generator),
            ("discriminator", self.discriminator),
            ("train_total", self.train_total),
            ("inference_total", self.infer_total),
        ]
        return [f"{name:<16} {n:>10d}  ({millions(n)})" for name, n in rows]

    def as_dict(self) -> dict:
        return {
            "stage1": self.stage1,
            "generator": self.generator,
            "discriminator": self.discriminator,
            "train_total": self.train_total,
            "inference_total": self.infer_total,
        }


# Configurations sized to the component counts quoted for the full system.
PAPER_STAGE1 = Stage1Config(conv_channels=64, emb=384, gru_hidden=384, groups=8, df_channels=24)
PAPER_GENERATOR = GeneratorConfig(hidden=16, state_dim=4, freq_kernel=3, freq_groups=13, mix_heads=16)
PAPER_DISCRIMINATOR = DiscriminatorConfig(channels=(16, 64, 64), down_groups=(4, 16), down_kernel=41)


def paper_report(stft_cfg: StftConfig | None = None) -> ParamReport:
    from .discriminator import Discriminator
    from .generator import Generator
    from .stage1 import Stage1

    stft_cfg = stft_cfg or StftConfig()
    return ParamReport(
        stage1=count_params(Stage1(PAPER_STAGE1, stft_cfg)),
        generator=count_params(Generator(PAPER_GENERATOR, stft_cfg)),
        discriminator=count_params(Discriminator(PAPER_DISCRIMINATOR)),
    )
