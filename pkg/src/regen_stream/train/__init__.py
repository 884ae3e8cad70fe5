from .data import Dataset, Item, load_dataset, save_dataset, synth_clean, synth_dataset
from .distortions import KINDS, DistortionSpec, apply_distortion, sample_spec, scale_to_snr
from .schedules import TrainConfig, lr_schedule, wd_schedule
from .trainer import (TrainResult, params_hash, stage1_eval_loss, stage1_loss_floor, train_stage1,
                      train_stage2)

__all__ = [
    "Dataset", "Item", "load_dataset", "save_dataset", "synth_clean", "synth_dataset",
    "KINDS", "DistortionSpec", "apply_distortion", "sample_spec", "scale_to_snr",
    "TrainConfig", "lr_schedule", "wd_schedule",
    "TrainResult", "params_hash", "stage1_eval_loss", "stage1_loss_floor", "train_stage1", "train_stage2",
]
