"""Small model factories shared by the tests."""
from __future__ import annotations

import numpy as np

from regen_stream.dsp import StftConfig
from regen_stream.models.discriminator import Discriminator, DiscriminatorConfig
from regen_stream.models.generator import Generator, GeneratorConfig
from regen_stream.models.stage1 import Stage1, Stage1Config

# acceptance criterion number -> printed status line
ACCEPTANCE_LINES: dict[int, str] = {}

SMALL_STFT = StftConfig(fft_len=64, hop=32)  # 33 bins


def small_stage1(seed: int = 0, stft_cfg: StftConfig = SMALL_STFT) -> Stage1:
    cfg = Stage1Config(erb_bands=8, conv_channels=4, emb=16, gru_hidden=16, groups=4, df_channels=4, seed=seed)
    return Stage1(cfg, stft_cfg)


def small_generator(seed: int = 1, stft_cfg: StftConfig = SMALL_STFT, init: str = "kaiming") -> Generator:
    cfg = GeneratorConfig(hidden=4, state_dim=3, freq_kernel=3, freq_groups=3, blocks=2, init=init, seed=seed)
    return Generator(cfg, stft_cfg)


def small_discriminator(seed: int = 2) -> Discriminator:
    cfg = DiscriminatorConfig(channels=(2, 4, 4), down_groups=(1, 2), first_kernel=5, down_kernel=5,
                              down_stride=2, post_kernel=3, seed=seed)
    return Discriminator(cfg)


def packed_spectrum(rng: np.random.Generator, frames: int, bins: int, scale: float = 1.0) -> np.ndarray:
    return scale * rng.standard_normal((1, frames, bins, 2))


def rel_l2(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a - b))


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def random_chunks(rng: np.random.Generator, total: int, max_chunk: int) -> list[int]:
    sizes, left = [], total
    while left > 0:
        n = int(rng.integers(0, max_chunk + 1))
        sizes.append(min(n, left))
        left -= sizes[-1]
    return sizes


def stage1_streamed(model: Stage1, spec: np.ndarray, chunks) -> tuple[np.ndarray, np.ndarray]:
    """Frame-chunked stage 1 with carried state, aligned like ``run_offline``."""
    d = model.delay_frames
    padded = np.concatenate([spec, np.zeros((1, d) + spec.shape[2:])], axis=1)
    state = model.initial_state(1)
    zs, ys, pos = [], [], 0
    for n in list(chunks) + [padded.shape[1]]:
        part = padded[:, pos:pos + n]
        pos += part.shape[1]
        if part.shape[1] == 0:
            continue
        z, y, state = model(part, state)
        zs.append(z.data)
        ys.append(y.data)
    return np.concatenate(zs, axis=1)[:, d:], np.concatenate(ys, axis=1)[:, d:]


def generator_streamed(model: Generator, noisy: np.ndarray, inter: np.ndarray, chunks) -> np.ndarray:
    state = model.initial_state(1)
    outs, pos = [], 0
    for n in list(chunks) + [noisy.shape[1]]:
        if pos >= noisy.shape[1]:
            break
        if n == 0:
            continue
        out, state = model(noisy[:, pos:pos + n], inter[:, pos:pos + n], state)
        outs.append(out.data)
        pos += n
    return np.concatenate(outs, axis=1)
