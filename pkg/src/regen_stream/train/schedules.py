"""Training configuration and the per-epoch learning-rate / weight-decay schedules."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class TrainConfig:
    """Defaults are the desk-scale (toy) values; :meth:`paper` gives the full-scale ones."""

    epochs_stage1: int = 5
    epochs_stage2: int = 20
    batch_size: int = 8
    crop_s: float = 0.5
    samples_per_epoch: int = 512
    lr_max: float = 1e-2
    lr_min: float = 3e-4
    lr_max_stage2: float = 1e-3
    lr_min_stage2: float = 3e-5
    warmup_epochs: int = 3
    wd_min: float = 0.05
    wd_max: float = 0.2
    disc_update_period: int = 2
    beta: float = 100.0
    grad_clip: float = 1.0
    seed: int = 42

    def __post_init__(self):
        for stage, n in (("stage1", self.epochs_stage1), ("stage2", self.epochs_stage2)):
            if n < 1:
                raise ValueError(f"epochs_{stage} must be >= 1")
            if not 0 <= self.warmup_epochs < n:
                raise ValueError(f"warmup_epochs must be in [0, epochs_{stage})")
        if self.disc_update_period < 1:
            raise ValueError("disc_update_period must be >= 1")
        if self.batch_size < 1 or self.samples_per_epoch < 1:
            raise ValueError("batch_size and samples_per_epoch must be >= 1")
        if self.crop_s <= 0:
            raise ValueError("crop_s must be positive")
        if not 0 < self.lr_min <= self.lr_max or not 0 < self.lr_min_stage2 <= self.lr_max_stage2:
            raise ValueError("need 0 < lr_min <= lr_max for both stages")
        if not 0 <= self.wd_min <= self.wd_max:
            raise ValueError("need 0 <= wd_min <= wd_max")
        if self.beta < 0 or self.grad_clip <= 0:
            raise ValueError("beta must be >= 0 and grad_clip > 0")

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        base = cls(epochs_stage1=45, epochs_stage2=200, batch_size=64, crop_s=2.0,
                   samples_per_epoch=180_000, lr_max=5e-4, lr_min=1e-6,
                   lr_max_stage2=5e-4, lr_min_stage2=1e-6)
        return replace(base, **overrides)

    def epochs(self, stage: int) -> int:
        if stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        return self.epochs_stage1 if stage == 1 else self.epochs_stage2

    def lr_range(self, stage: int) -> tuple[float, float]:
        self.epochs(stage)
        return (self.lr_max, self.lr_min) if stage == 1 else (self.lr_max_stage2, self.lr_min_stage2)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown training config keys: {unknown}")
        return cls(**data)


def _check_epoch(epoch: int, epochs: int) -> None:
    if not 0 <= epoch < epochs:
        raise ValueError(f"epoch {epoch} outside [0, {epochs})")


def lr_schedule(epoch: int, cfg: TrainConfig, stage: int = 1) -> float:
    """Linear warmup to lr_max, then cosine decay towards lr_min."""
    epochs = cfg.epochs(stage)
    _check_epoch(epoch, epochs)
    lr_max, lr_min = cfg.lr_range(stage)
    w = cfg.warmup_epochs
    if epoch < w:
        return lr_max * (epoch + 1) / w
    progress = (epoch - w) / (epochs - w)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * progress))


def wd_schedule(epoch: int, cfg: TrainConfig, stage: int = 1) -> float:
    """Increasing cosine from wd_min (first epoch) to wd_max (last epoch)."""
    epochs = cfg.epochs(stage)
    _check_epoch(epoch, epochs)
    if epochs == 1:
        return cfg.wd_min
    return cfg.wd_min + 0.5 * (cfg.wd_max - cfg.wd_min) * (1.0 - math.cos(math.pi * epoch / (epochs - 1)))
