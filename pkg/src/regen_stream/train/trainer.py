"""Two-step training: stage-1 pretraining, then adversarial generator training with stage 1 frozen."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dsp import StftConfig
from ..errors import CheckpointError, TrainingError
from ..losses import (SI_SDR_CAP, Stage1LossConfig, generator_adversarial_loss, generator_total_loss,
                      hinge_discriminator_loss, stage1_loss)
from ..models.discriminator import Discriminator, DiscriminatorConfig
from ..models.generator import Generator, GeneratorConfig
from ..models.stage1 import Stage1, Stage1Config
from ..nn import checkpoint as ckpt_io
from ..nn.autograd import GradientSet, Tensor, backward, no_grad
from ..nn.optim import AdamW, clip_grad_global_norm
from ..nn.spectral import istft_tensor, stft_cfg_tensor
from ..pipeline import INTERNAL_RATE, ModelBundle, bundle_from_checkpoint, bundle_to_checkpoint
from .data import Dataset
from .schedules import TrainConfig, lr_schedule, wd_schedule


@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def params_hash(module) -> str:
    h = hashlib.sha256()
    for name, arr in sorted(module.arrays().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()


def stage1_loss_floor(loss_cfg: Stage1LossConfig) -> float:
    """Analytic minimum of the composite stage-1 loss (reached by a perfect estimate)."""
    return -SI_SDR_CAP * loss_cfg.weights["si_sdr"]


# -- data plumbing ---------------------------------------------------------------


def prepare_pairs(dataset: Dataset) -> list[tuple[np.ndarray, np.ndarray]]:
    """(clean, degraded) pairs resampled to the internal rate."""
    if len(dataset) == 0:
        raise TrainingError("dataset is empty")
    return [it.at_rate(INTERNAL_RATE) for it in dataset.items]


def _crop(sig: np.ndarray, start: int, length: int) -> np.ndarray:
    out = sig[start:start + length]
    return out if len(out) == length else np.concatenate([out, np.zeros(length - len(out))])


def make_batch(pairs, indices, crop_len: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    clean, noisy = [], []
    for i in indices:
        c, d = pairs[i]
        start = int(rng.integers(0, max(1, len(c) - crop_len + 1)))
        clean.append(_crop(c, start, crop_len))
        noisy.append(_crop(d, start, crop_len))
    return np.stack(clean), np.stack(noisy)


def epoch_indices(n_items: int, cfg: TrainConfig, epoch: int, stage: int) -> np.ndarray:
    """Seeded per-epoch subset; the full set (reshuffled) when samples_per_epoch exceeds it."""
    rng = np.random.default_rng([cfg.seed, stage, epoch])
    return rng.permutation(n_items)[: min(cfg.samples_per_epoch, n_items)]


def _batches(indices: np.ndarray, batch_size: int):
    for s in range(0, len(indices), batch_size):
        yield indices[s:s + batch_size]


def _crop_len(cfg: TrainConfig) -> int:
    return int(round(cfg.crop_s * INTERNAL_RATE))


def _spec(noisy: np.ndarray, stft_cfg: StftConfig) -> np.ndarray:
    with no_grad():
        return stft_cfg_tensor(noisy, stft_cfg).data


def stage1_estimate(stage1: Stage1, noisy: np.ndarray) -> Tensor:
    z, _ = stage1.run_offline(_spec(noisy, stage1.stft_config))
    return istft_tensor(z, stage1.stft_config, noisy.shape[1])


def stage2_estimate(stage1: Stage1, generator: Generator, noisy: np.ndarray,
                    stft_cfg: StftConfig) -> Tensor:
    spec = _spec(noisy, stft_cfg)
    with no_grad():
        z, y = stage1.run_offline(spec)
    out, _ = generator(y.data, z.data)
    return istft_tensor(out, stft_cfg, noisy.shape[1])


def eval_crops(pairs, crop_len: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed crops of every item, used to measure training-set loss before and after."""
    rng = np.random.default_rng([seed, 7919])
    return make_batch(pairs, range(len(pairs)), crop_len, rng)


def stage1_eval_loss(stage1: Stage1, clean: np.ndarray, noisy: np.ndarray,
                     loss_cfg: Stage1LossConfig, batch_size: int = 8) -> float:
    totals = []
    with no_grad():
        for s in range(0, len(clean), batch_size):
            est = stage1_estimate(stage1, noisy[s:s + batch_size])
            rep = stage1_loss(clean[s:s + batch_size], est, loss_cfg)
            totals.append(rep.total * len(clean[s:s + batch_size]))
    return float(sum(totals) / len(clean))


# -- logging -----------------------------------------------------------------------


class _Log:
    def __init__(self, path: str | Path | None, append: bool):
        self.records: list[dict] = []
        self._fh = None
        if path is not None:
            self._fh = open(path, "a" if append else "w", encoding="utf-8")

    def write(self, rec: dict) -> None:
        self.records.append(rec)
        if self._fh is not None:
            self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _finite_or_raise(value: float, step: int, epoch: int, last_ok: tuple | None, what: str) -> None:
    if not math.isfinite(value):
        tail = (f"last finite step {last_ok[0]} ({what} {last_ok[1]:.6g})" if last_ok
                else "no finite step recorded")
        raise TrainingError(f"non-finite {what} at step {step} (epoch {epoch}); {tail}")


# -- stage 1 -------------------------------------------------------------------------


def train_stage1(dataset: Dataset, cfg: TrainConfig = TrainConfig(), *,
                 stage1_cfg: Stage1Config | None = None, stft_cfg: StftConfig | None = None,
                 loss_cfg: Stage1LossConfig | None = None, resume: ckpt_io.Checkpoint | None = None,
                 log_path: str | Path | None = None, ckpt_path: str | Path | None = None) -> TrainResult:
    """Optimize the stage-1 composite loss; returns a checkpoint holding the stage-1 model."""
    pairs = prepare_pairs(dataset)
    loss_cfg = loss_cfg or Stage1LossConfig()
    start_epoch, step = 0, 0
    if resume is not None:
        meta = resume.header.get("meta", {})
        if meta.get("stage") != 1:
            raise CheckpointError("resume checkpoint is not a stage-1 training checkpoint")
        bundle = bundle_from_checkpoint(resume)
        stage1 = bundle.stage1
        start_epoch, step = int(meta["epochs_done"]), int(meta["step"])
    else:
        stft_cfg = stft_cfg or StftConfig()
        stage1 = Stage1(stage1_cfg or Stage1Config(seed=cfg.seed), stft_cfg)
    params = stage1.parameters()
    opt = AdamW(params)
    if resume is not None:
        opt.load_state_arrays(resume.tensors, "optim.stage1")

    crop_len = _crop_len(cfg)
    ev_clean, ev_noisy = eval_crops(pairs, crop_len, cfg.seed)
    log = _Log(log_path, append=resume is not None)
    floor = stage1_loss_floor(loss_cfg)
    initial = stage1_eval_loss(stage1, ev_clean, ev_noisy, loss_cfg, cfg.batch_size)
    if resume is None:
        log.write({"event": "start", "stage": 1, "seed": cfg.seed, "eval_loss": initial,
                   "loss_floor": floor, "n_params": stage1.num_params()})
    last_ok = None
    epochs = cfg.epochs_stage1
    try:
        for epoch in range(start_epoch, epochs):
            lr, wd = lr_schedule(epoch, cfg, 1), wd_schedule(epoch, cfg, 1)
            rng = np.random.default_rng([cfg.seed, 1, epoch, 1])
            for idx in _batches(epoch_indices(len(pairs), cfg, epoch, 1), cfg.batch_size):
                clean, noisy = make_batch(pairs, idx, crop_len, rng)
                rep = stage1_loss(clean, stage1_estimate(stage1, noisy), loss_cfg)
                _finite_or_raise(rep.total, step, epoch, last_ok, "loss")
                grads = backward(rep.tensor, params)
                pre = grads.global_norm
                _finite_or_raise(pre, step, epoch, last_ok, "gradient norm")
                grads = clip_grad_global_norm(grads, cfg.grad_clip)
                opt.step(grads, lr, wd)
                log.write(rep.to_record(step=step, epoch=epoch, lr=lr, wd=wd, stage=1,
                                        grad_norm=pre, grad_norm_clipped=grads.global_norm))
                last_ok = (step, rep.total)
                step += 1
            if ckpt_path is not None:
                ckpt_io.save(ckpt_path, _stage1_checkpoint(stage1, opt, cfg, epoch + 1, step))
        final = stage1_eval_loss(stage1, ev_clean, ev_noisy, loss_cfg, cfg.batch_size)
        summary = {"event": "end", "stage": 1, "eval_loss_initial": initial, "eval_loss": final,
                   "loss_floor": floor, "steps": step}
        log.write(summary)
    finally:
        log.close()
    ck = _stage1_checkpoint(stage1, opt, cfg, epochs, step)
    if ckpt_path is not None:
        ckpt_io.save(ckpt_path, ck)
    return TrainResult(ck, log.records, summary)


def _stage1_checkpoint(stage1, opt, cfg, epochs_done, step) -> ckpt_io.Checkpoint:
    meta = {"stage": 1, "epochs_done": epochs_done, "step": step, "train_config": cfg.to_dict()}
    bundle = ModelBundle(stft=stage1.stft_config, stage1=stage1)
    return bundle_to_checkpoint(bundle, meta, opt.state_arrays("optim.stage1"))


# -- stage 2 -------------------------------------------------------------------------


def train_stage2(dataset: Dataset, stage1_ckpt: ckpt_io.Checkpoint, cfg: TrainConfig = TrainConfig(), *,
                 generator_cfg: GeneratorConfig | None = None,
                 discriminator_cfg: DiscriminatorConfig | None = None,
                 resume: ckpt_io.Checkpoint | None = None, max_steps: int | None = None,
                 micro_batch: int = 2, log_path: str | Path | None = None, ckpt_path: str | Path | None = None) -> TrainResult:
    """Adversarial training of the generator with the stage-1 model frozen.

    Each batch is processed in ``micro_batch``-sized pieces whose gradients are
    accumulated with size weights, so updates equal full-batch updates.
    """
    if stage1_ckpt is None:
        raise CheckpointError("stage-2 training needs a stage-1 checkpoint")
    pairs = prepare_pairs(dataset)
    start_epoch, it = 0, 0
    if resume is not None:
        meta = resume.header.get("meta", {})
        if meta.get("stage") != 2:
            raise CheckpointError("resume checkpoint is not a stage-2 training checkpoint")
        bundle = bundle_from_checkpoint(resume)
        start_epoch, it = int(meta["epochs_done"]), int(meta["step"])
    else:
        base = bundle_from_checkpoint(stage1_ckpt)
        if base.stage1 is None:
            raise CheckpointError("stage-1 checkpoint holds no stage-1 model")
        bundle = ModelBundle(
            stft=base.stft, stage1=base.stage1,
            generator=Generator(generator_cfg or GeneratorConfig(seed=cfg.seed + 1), base.stft),
            discriminator=Discriminator(discriminator_cfg or DiscriminatorConfig(seed=cfg.seed + 2)),
        )
    stage1, gen, disc = bundle.stage1, bundle.generator, bundle.discriminator
    frozen_hash = params_hash(stage1)
    g_params, d_params = gen.parameters(), disc.parameters()
    g_opt, d_opt = AdamW(g_params), AdamW(d_params)
    if resume is not None:
        g_opt.load_state_arrays(resume.tensors, "optim.generator")
        d_opt.load_state_arrays(resume.tensors, "optim.discriminator")

    crop_len = _crop_len(cfg)
    log = _Log(log_path, append=resume is not None)
    if resume is None:
        log.write({"event": "start", "stage": 2, "seed": cfg.seed, "stage1_hash": frozen_hash,
                   "disc_update_period": cfg.disc_update_period, "beta": cfg.beta})
    last_ok = None
    disc_updates = 0
    epochs = cfg.epochs_stage2
    done = False
    epoch = start_epoch
    try:
        for epoch in range(start_epoch, epochs):
            lr, wd = lr_schedule(epoch, cfg, 2), wd_schedule(epoch, cfg, 2)
            rng = np.random.default_rng([cfg.seed, 2, epoch, 1])
            for idx in _batches(epoch_indices(len(pairs), cfg, epoch, 2), cfg.batch_size):
                if max_steps is not None and it >= max_steps:
                    done = True
                    break
                clean, noisy = make_batch(pairs, idx, crop_len, rng)
                parts = _micro(len(idx), micro_batch)
                rec = {"step": it, "epoch": epoch, "lr": lr, "wd": wd, "stage": 2, "stage1_updates": 0}
                update_d = it % cfg.disc_update_period == 0
                if update_d:
                    d_total, d_grads = 0.0, None
                    for sl, w in parts:
                        with no_grad():
                            fake = stage2_estimate(stage1, gen, noisy[sl], bundle.stft).data
                        d_loss = hinge_discriminator_loss(disc(clean[sl]), disc(fake)) * w
                        d_total += d_loss.item()
                        d_grads = _accumulate(d_grads, backward(d_loss, d_params))
                    _finite_or_raise(d_total, it, epoch, last_ok, "discriminator loss")
                    d_grads = clip_grad_global_norm(d_grads, cfg.grad_clip)
                    d_opt.step(d_grads, lr, wd)
                    disc_updates += 1
                    rec.update(disc_loss=d_total, grad_norm_d_clipped=d_grads.global_norm)
                rec["disc_update"] = update_d
                terms, g_grads = {"adversarial": 0.0, "time_l1": 0.0, "total": 0.0}, None
                for sl, w in parts:
                    est = stage2_estimate(stage1, gen, noisy[sl], bundle.stft)
                    rep = generator_total_loss(generator_adversarial_loss(disc(est)), clean[sl], est, cfg.beta)
                    for k, v in rep.terms.items():
                        terms[k] += w * v
                    terms["total"] += w * rep.total
                    g_grads = _accumulate(g_grads, backward(rep.tensor * w, g_params))
                _finite_or_raise(terms["total"], it, epoch, last_ok, "generator loss")
                pre = g_grads.global_norm
                g_grads = clip_grad_global_norm(g_grads, cfg.grad_clip)
                g_opt.step(g_grads, lr, wd)
                rec.update(terms, grad_norm_g=pre, grad_norm_g_clipped=g_grads.global_norm)
                log.write(rec)
                last_ok = (it, terms["total"])
                it += 1
            if done:
                break
            if ckpt_path is not None:
                ckpt_io.save(ckpt_path, _stage2_checkpoint(bundle, g_opt, d_opt, cfg, epoch + 1, it))
        after = params_hash(stage1)
        if after != frozen_hash:
            raise TrainingError("stage-1 parameters changed during stage-2 training")
        summary = {"event": "end", "stage": 2, "steps": it, "disc_updates": disc_updates,
                   "stage1_hash_before": frozen_hash, "stage1_hash_after": after}
        log.write(summary)
    finally:
        log.close()
    epochs_done = epoch if done else epochs
    ck = _stage2_checkpoint(bundle, g_opt, d_opt, cfg, epochs_done, it)
    if ckpt_path is not None:
        ckpt_io.save(ckpt_path, ck)
    return TrainResult(ck, log.records, summary)


def _micro(n: int, size: int):
    """Slices of a batch of ``n`` into chunks of ``size`` with weights chunk/n."""
    return [(slice(s, min(n, s + size)), (min(n, s + size) - s) / n) for s in range(0, n, size)]


def _accumulate(acc: GradientSet | None, grads: GradientSet) -> GradientSet:
    if acc is None:
        return grads
    return GradientSet({k: acc[k] + grads[k] for k in acc})


def _stage2_checkpoint(bundle, g_opt, d_opt, cfg, epochs_done, step) -> ckpt_io.Checkpoint:
    meta = {"stage": 2, "epochs_done": epochs_done, "step": step, "train_config": cfg.to_dict()}
    extra = dict(g_opt.state_arrays("optim.generator"))
    extra.update(d_opt.state_arrays("optim.discriminator"))
    return bundle_to_checkpoint(bundle, meta, extra)
