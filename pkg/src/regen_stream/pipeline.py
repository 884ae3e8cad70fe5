"""End-to-end enhancement: resample, STFT, stage 1, generator, inverse STFT, resample back.

Offline processing returns audio aligned with the input. Streaming processing
emits ``max(0, consumed - latency)`` samples after each push; the emitted
samples are the same samples the offline path produces, released once the
40 ms algorithmic budget has elapsed.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import StftConfig, _ls_synthesis, resample, stft
from .errors import CheckpointError, ConfigMismatchError, StreamError
from .models.discriminator import Discriminator, DiscriminatorConfig
from .models.generator import Generator, GeneratorConfig
from .models.stage1 import Stage1, Stage1Config
from .nn import autograd as ag
from .nn import checkpoint as ckpt_io
from .nn.autograd import Tensor, no_grad

MODES = ("two_stage", "stage1_only", "generator_only")
INTERNAL_RATE = 48000


# -- model bundles and checkpoints ------------------------------------------


@dataclass
class ModelBundle:
    stft: StftConfig = field(default_factory=StftConfig)
    stage1: Stage1 | None = None
    generator: Generator | None = None
    discriminator: Discriminator | None = None

    @classmethod
    def fresh(cls, stft_cfg: StftConfig | None = None, stage1_cfg: Stage1Config | None = None,
              generator_cfg: GeneratorConfig | None = None,
              discriminator_cfg: DiscriminatorConfig | None = None) -> "ModelBundle":
        stft_cfg = stft_cfg or StftConfig()
        return cls(
            stft=stft_cfg,
            stage1=Stage1(stage1_cfg or Stage1Config(), stft_cfg),
            generator=Generator(generator_cfg or GeneratorConfig(), stft_cfg),
            discriminator=Discriminator(discriminator_cfg or DiscriminatorConfig()),
        )

    def components(self) -> dict:
        return {k: m for k, m in (("stage1", self.stage1), ("generator", self.generator),
                                  ("discriminator", self.discriminator)) if m is not None}


def bundle_to_checkpoint(bundle: ModelBundle, meta: dict | None = None,
                         extra_tensors: dict[str, np.ndarray] | None = None) -> ckpt_io.Checkpoint:
    header = {"stft": bundle.stft.to_dict(), "configs": {}, "meta": dict(meta or {})}
    tensors: dict[str, np.ndarray] = {}
    for prefix, module in bundle.components().items():
        header["configs"][prefix] = module.config.to_dict()
        for name, arr in module.arrays().items():
            tensors[f"{prefix}.{name}"] = np.array(arr)
    tensors.update(extra_tensors or {})
    return ckpt_io.Checkpoint(tensors=tensors, header=header)


def _expected_shapes(bundle: ModelBundle) -> dict[str, tuple]:
    return {f"{prefix}.{name}": arr.shape
            for prefix, module in bundle.components().items()
            for name, arr in module.arrays().items()}


def bundle_from_checkpoint(ckpt: ckpt_io.Checkpoint) -> ModelBundle:
    """Rebuild every component stored in ``ckpt`` from its header configs and tensors."""
    try:
        stft_cfg = StftConfig(**ckpt.header["stft"])
        configs = ckpt.header.get("configs", {})
        bundle = ModelBundle(stft=stft_cfg)
        if "stage1" in configs:
            bundle.stage1 = Stage1(Stage1Config(**configs["stage1"]), stft_cfg)
        if "generator" in configs:
            gen_cfg = dict(configs["generator"], init="kaiming")
            bundle.generator = Generator(GeneratorConfig(**gen_cfg), stft_cfg)
        if "discriminator" in configs:
            bundle.discriminator = Discriminator(DiscriminatorConfig(**configs["discriminator"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint header does not describe a valid topology: {exc}") from None
    ckpt_io.validate_shapes(ckpt.tensors, _expected_shapes(bundle))
    for prefix, module in bundle.components().items():
        module.load_arrays(ckpt.subset(prefix), strict=False)
    return bundle


def load_bundle(path: str | Path) -> ModelBundle:
    return bundle_from_checkpoint(ckpt_io.load(path))


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    stft: StftConfig = StftConfig()
    stage1: Stage1Config = Stage1Config()
    generator: GeneratorConfig = GeneratorConfig()
    checkpoint: str | None = None
    mode: str = "two_stage"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


class _DelayStage:
    """Stage-1 stand-in for ``generator_only``: passes Y through with the same frame delay."""

    def __init__(self, stft_cfg: StftConfig):
        self._delay = stft_cfg.lookahead_frames
        self._bins = stft_cfg.n_bins

    @property
    def delay_frames(self) -> int:
        return self._delay

    def initial_state(self, batch: int = 1) -> dict:
        return {"noisy_hist": np.zeros((batch, self._delay, self._bins, 2)), "steps": 0}

    def __call__(self, spec, state):
        spec = ag.as_tensor(spec)
        full = np.concatenate([state["noisy_hist"], spec.data], axis=1)
        t = spec.shape[1]
        out = Tensor(full[:, :t])
        new_state = {"noisy_hist": full[:, full.shape[1] - self._delay:], "steps": state["steps"] + t}
        return out, out, new_state

    def run_offline(self, spec):
        spec = ag.as_tensor(spec)
        return spec, spec


class Enhancer:
    """Models plus mode; owns no per-stream state."""

    def __init__(self, bundle: ModelBundle, mode: str = "two_stage"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode in ("two_stage", "stage1_only") and bundle.stage1 is None:
            raise CheckpointError(f"mode {mode} needs a stage-1 model")
        if mode in ("two_stage", "generator_only") and bundle.generator is None:
            raise CheckpointError(f"mode {mode} needs a generator model")
        self.bundle = bundle
        self.mode = mode
        self.stft_cfg = bundle.stft
        self.front = _DelayStage(bundle.stft) if mode == "generator_only" else bundle.stage1
        self.generator = bundle.generator if mode != "stage1_only" else None

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "Enhancer":
        if cfg.checkpoint is None:
            raise CheckpointError("no checkpoint given")
        bundle = load_bundle(cfg.checkpoint)
        if bundle.stft.geometry() != cfg.stft.geometry():
            raise ConfigMismatchError("checkpoint STFT geometry differs from the pipeline configuration")
        return cls(bundle, cfg.mode)

    @property
    def latency_samples(self) -> int:
        return self.stft_cfg.latency_samples

    # spectra are (1, T, F, 2) real arrays
    def enhance_spectrum(self, spec: np.ndarray) -> np.ndarray:
        with no_grad():
            z, y = self.front.run_offline(spec)
            if self.generator is None:
                return z.data
            out, _ = self.generator(y, z)
            return out.data

    def enhance_48k(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if len(x) == 0:
            return np.zeros(0)
        spec = stft(x, self.stft_cfg).data
        packed = np.stack([spec.real, spec.imag], axis=-1)[None]
        out = self.enhance_spectrum(packed)[0]
        return _synthesize(out, self.stft_cfg, len(x))


def _synthesize(packed: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    from .dsp import ComplexSpectrogram, istft

    spec = ComplexSpectrogram(packed[..., 0] + 1j * packed[..., 1], cfg)
    return istft(spec, cfg, length)


def enhance_offline(noisy, rate: int, enhancer: Enhancer) -> np.ndarray:
    """Enhance a whole signal; output has the input's rate and length and is latency-compensated."""
    x = np.asarray(noisy, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a mono signal, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite samples")
    x48 = resample(x, rate, INTERNAL_RATE)
    y48 = enhancer.enhance_48k(x48)
    y = resample(y48, INTERNAL_RATE, rate)
    if len(y) != len(x):
        y = y[: len(x)] if len(y) > len(x) else np.concatenate([y, np.zeros(len(x) - len(y))])
    return y


# -- streaming -----------------------------------------------------------------


@dataclass
class StreamState:
    pending: np.ndarray
    ola_tail: np.ndarray
    front_state: dict
    gen_state: dict | None
    ready: np.ndarray
    consumed: int = 0
    emitted: int = 0
    frames_in: int = 0
    frames_emitted: int = 0
    input_rate: int = INTERNAL_RATE
    poisoned: bool = False
    flushed: bool = False
    timings: dict = field(default_factory=lambda: {"dsp": 0.0, "stage1": 0.0, "generator": 0.0})


def new_stream(enhancer: Enhancer, rate: int = INTERNAL_RATE) -> StreamState:
    """Fresh per-stream state. Streaming runs at the internal 48 kHz rate."""
    if rate != INTERNAL_RATE:
        raise ConfigMismatchError(
            f"streaming runs at {INTERNAL_RATE} Hz; resample {rate} Hz input before pushing")
    cfg = enhancer.stft_cfg
    return StreamState(
        pending=np.zeros(cfg.pad),
        ola_tail=np.zeros(cfg.win_len - cfg.hop),
        front_state=enhancer.front.initial_state(1),
        gen_state=enhancer.generator.initial_state(1) if enhancer.generator is not None else None,
        ready=np.zeros(0),
        input_rate=rate,
    )


def reset_stream(enhancer: Enhancer, state: StreamState) -> StreamState:
    return new_stream(enhancer, state.input_rate)


def _process_frames(enhancer: Enhancer, state: StreamState, frames: np.ndarray) -> None:
    """Run analysis frames (n, win) through the models and extend ``state.ready``."""
    cfg = enhancer.stft_cfg
    t0 = time.perf_counter()
    spec = np.fft.rfft(frames * cfg.analysis_window(), n=cfg.fft_len, axis=-1)
    packed = np.stack([spec.real, spec.imag], axis=-1)[None]
    t1 = time.perf_counter()
    with no_grad():
        z, y, state.front_state = enhancer.front(packed, state.front_state)
        delay = enhancer.front.delay_frames
        first = max(0, delay - state.frames_in)  # warm-up positions map to negative frames
        state.frames_in += frames.shape[0]
        z, y = z.data[:, first:], y.data[:, first:]
        t2 = time.perf_counter()
        if enhancer.generator is not None and z.shape[1]:
            out, state.gen_state = enhancer.generator(y, z, state.gen_state)
            out = out.data
        else:
            out = z
    t3 = time.perf_counter()
    n_out = out.shape[1]
    if n_out:
        spec_out = out[0, ..., 0] + 1j * out[0, ..., 1]
        fr = np.fft.irfft(spec_out, n=cfg.fft_len, axis=-1)[:, : cfg.win_len] * _ls_synthesis(cfg.win_len, cfg.hop)
        tail = state.ola_tail
        blocks = []
        for f in fr:
            acc = np.concatenate([tail, np.zeros(cfg.hop)]) + f
            blocks.append(acc[: cfg.hop])
            tail = acc[cfg.hop:]
        state.ola_tail = tail
        produced = np.concatenate(blocks)
        # the first pad samples of the padded timeline precede the signal
        skip = max(0, cfg.pad - state.frames_emitted * cfg.hop)
        state.frames_emitted += n_out
        state.ready = np.concatenate([state.ready, produced[skip:]])
    t4 = time.perf_counter()
    state.timings["dsp"] += (t1 - t0) + (t4 - t3)
    state.timings["stage1"] += t2 - t1
    state.timings["generator"] += t3 - t2


def _feed(enhancer: Enhancer, state: StreamState, chunk: np.ndarray) -> None:
    cfg = enhancer.stft_cfg
    buf = np.concatenate([state.pending, chunk])
    n = 0 if len(buf) < cfg.win_len else (len(buf) - cfg.win_len) // cfg.hop + 1
    if n:
        frames = np.lib.stride_tricks.sliding_window_view(buf, cfg.win_len)[:: cfg.hop][:n]
        _process_frames(enhancer, state, np.array(frames))
    state.pending = buf[n * cfg.hop:]


def _take(state: StreamState, count: int) -> np.ndarray:
    out = state.ready[:count]
    state.ready = state.ready[count:]
    state.emitted += len(out)
    return out


def stream_push(enhancer: Enhancer, state: StreamState, chunk) -> tuple[StreamState, np.ndarray]:
    """Consume ``chunk``; return the state and every output sample now due."""
    if state.poisoned:
        raise StreamError("stream state is poisoned by an earlier error; reset it first")
    if state.flushed:
        raise StreamError("stream already flushed; reset it before pushing more audio")
    chunk = np.asarray(chunk, dtype=np.float64).reshape(-1)
    if len(chunk) == 0:
        return state, np.zeros(0)
    if not np.all(np.isfinite(chunk)):
        state.poisoned = True
        raise StreamError("chunk contains non-finite samples")
    _feed(enhancer, state, chunk)
    state.consumed += len(chunk)
    due = max(0, state.consumed - enhancer.latency_samples) - state.emitted
    return state, _take(state, due)


def flush(enhancer: Enhancer, state: StreamState) -> np.ndarray:
    """Drain the pipeline with zeros so that total output length equals total input length."""
    if state.poisoned:
        raise StreamError("stream state is poisoned by an earlier error; reset it first")
    if state.flushed:
        return np.zeros(0)
    hop = enhancer.stft_cfg.hop
    while state.emitted + len(state.ready) < state.consumed:
        _feed(enhancer, state, np.zeros(hop))
    state.flushed = True
    return _take(state, state.consumed - state.emitted)


def enhance_streaming(enhancer: Enhancer, x: np.ndarray, chunk_sizes) -> np.ndarray:
    """Push ``x`` (48 kHz) in the given chunk sizes, then flush; returns the concatenated output."""
    state = new_stream(enhancer)
    outs, pos = [], 0
    for n in chunk_sizes:
        state, y = stream_push(enhancer, state, x[pos:pos + n])
        outs.append(y)
        pos += n
    if pos < len(x):
        state, y = stream_push(enhancer, state, x[pos:])
        outs.append(y)
    outs.append(flush(enhancer, state))
    return np.concatenate(outs) if outs else np.zeros(0)


def measure_rtf(enhancer: Enhancer, duration_s: float = 10.0, seed: int = 42,
                chunk: int | None = None) -> dict:
    """Real-time factor of streaming processing on seeded synthetic input, with per-stage split."""
    if duration_s < 1.0:
        raise ValueError("duration must be at least 1 s")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * INTERNAL_RATE))
    x = 0.1 * rng.standard_normal(n)
    chunk = chunk or enhancer.stft_cfg.hop
    state = new_stream(enhancer)
    t0 = time.perf_counter()
    for start in range(0, n, chunk):
        state, _ = stream_push(enhancer, state, x[start:start + chunk])
    flush(enhancer, state)
    wall = time.perf_counter() - t0
    audio = n / INTERNAL_RATE
    report = {"rtf": wall / audio, "wall_s": wall, "audio_s": audio, "mode": enhancer.mode}
    report.update({f"rtf_{k}": v / audio for k, v in state.timings.items()})
    return report
