"""Synthetic speech-like training data and its on-disk manifest."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dsp import SUPPORTED_RATES, resample
from ..wavio import read_wav, write_wav
from .distortions import KINDS, DistortionSpec, apply_distortion, sample_spec

MANIFEST_VERSION = 1


def synth_clean(n_samples: int, rate: int, rng: np.random.Generator) -> np.ndarray:
    """Harmonic tone complex with gliding pitch and a syllable-like amplitude envelope."""
    t = np.arange(n_samples) / rate
    f0 = rng.uniform(90.0, 240.0)
    glide = 1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * glide) / rate
    n_harm = int(min(0.45 * rate, 12000.0) // (f0 * 1.1))
    formants = rng.uniform([400.0, 1100.0, 2300.0], [900.0, 1900.0, 3200.0])
    x = np.zeros(n_samples)
    for k in range(1, n_harm + 1):
        fk = k * f0
        env = sum(np.exp(-0.5 * ((fk - fm) / 250.0) ** 2) for fm in formants)
        x += (0.2 / k + env) * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    syl = rng.uniform(3.0, 6.0)
    am = np.clip(np.sin(np.pi * syl * t + rng.uniform(0, np.pi)), 0.0, None) ** 1.5
    x *= 0.3 + 0.7 * am
    peak = np.max(np.abs(x))
    return x * (0.5 / peak) if peak > 0 else x


@dataclass
class Item:
    clean: np.ndarray
    degraded: np.ndarray
    rate: int
    seed: list
    distortions: list = field(default_factory=list)

    def at_rate(self, rate: int) -> tuple[np.ndarray, np.ndarray]:
        return resample(self.clean, self.rate, rate), resample(self.degraded, self.rate, rate)


@dataclass
class Dataset:
    items: list
    seed: int
    duration_s: float

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i: int) -> Item:
        return self.items[i]

    def manifest(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "items": [
                {"index": i, "rate": it.rate, "seed": list(it.seed), "n_samples": len(it.clean),
                 "distortions": [d.to_dict() for d in it.distortions]}
                for i, it in enumerate(self.items)
            ],
        }

    def split(self, n_train: int) -> tuple["Dataset", "Dataset"]:
        return (Dataset(self.items[:n_train], self.seed, self.duration_s),
                Dataset(self.items[n_train:], self.seed, self.duration_s))


def make_item(seed: int, index: int, duration_s: float, rates=SUPPORTED_RATES,
              kinds=KINDS, max_distortions: int = 3) -> Item:
    key = [int(seed), int(index)]
    rng = np.random.default_rng(key)
    rate = int(rng.choice(list(rates)))
    clean = synth_clean(int(round(duration_s * rate)), rate, rng)
    n = int(rng.integers(1, max_distortions + 1))
    chosen = rng.choice(list(kinds), size=min(n, len(kinds)), replace=False)
    specs = [sample_spec(str(k), rate, rng) for k in chosen]
    degraded = clean
    for spec in specs:
        degraded = apply_distortion(degraded, rate, spec, rng)
    return Item(clean, degraded, rate, key, specs)


def synth_dataset(n_items: int, seed: int = 42, duration_s: float = 0.5, rates=SUPPORTED_RATES,
                  kinds=KINDS, jobs: int = 1) -> Dataset:
    """Deterministic per (seed, item index); ``jobs`` only changes wall time."""
    if n_items < 1:
        raise ValueError("n_items must be >= 1")

    def build(i):
        return make_item(seed, i, duration_s, rates, kinds)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            items = list(pool.map(build, range(n_items)))
    else:
        items = [build(i) for i in range(n_items)]
    return Dataset(items, seed, duration_s)


def save_dataset(ds: Dataset, directory: str | Path) -> Path:
    """Write clean/degraded WAVs (float32) and ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    man = ds.manifest()
    for entry, it in zip(man["items"], ds.items):
        i = entry["index"]
        entry["clean"] = f"clean_{i:05d}.wav"
        entry["degraded"] = f"degraded_{i:05d}.wav"
        write_wav(directory / entry["clean"], it.clean, it.rate)
        write_wav(directory / entry["degraded"], it.degraded, it.rate)
    path = directory / "manifest.json"
    path.write_text(json.dumps(man, indent=1, sort_keys=True))
    return path


def load_dataset(manifest_path: str | Path) -> Dataset:
    manifest_path = Path(manifest_path)
    man = json.loads(manifest_path.read_text())
    if man.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {man.get('version')}")
    base = manifest_path.parent
    items = []
    for entry in man["items"]:
        clean, rate = read_wav(base / entry["clean"])
        degraded, rate2 = read_wav(base / entry["degraded"])
        if rate != rate2 or rate != entry["rate"] or len(clean) != len(degraded):
            raise ValueError(f"manifest item {entry['index']}: clean/degraded files disagree")
        specs = [DistortionSpec.from_dict(d) for d in entry["distortions"]]
        items.append(Item(clean, degraded, rate, entry["seed"], specs))
    return Dataset(items, man["seed"], man["duration_s"])
