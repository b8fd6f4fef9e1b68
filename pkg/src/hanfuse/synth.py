"""Synthetic paired feature maps for exercising the routers.

Every scenario starts from a smooth base field ``s`` (a few low-frequency
cosines per channel, rescaled to unit RMS) and derives the two modalities
from it according to the scenario class. The target is always ``s``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import HanConfig
from .errors import ConfigError
from .formats import _atomic_write, read_tensor, write_tensor
from .rng import Rng, derive_seed

CLASSES = ("clean-both", "noisy-tir", "noisy-rgb", "complementary", "low-contrast")
NOISE_SIGMA = 2.0
LOW_CONTRAST_GAIN = 0.1
LOW_CONTRAST_SIGMA = 0.05
N_COMPONENTS = 5


@dataclass
class Scenario:
    cls: str
    rgb: np.ndarray
    tir: np.ndarray
    target: np.ndarray
    seed: int


def base_field(shape, rng: Rng) -> np.ndarray:
    C, H, W = shape
    hh, ww = np.meshgrid(np.arange(H) / H, np.arange(W) / W, indexing="ij")
    field = np.zeros(shape)
    for _ in range(N_COMPONENTS):
        fy, fx = rng.integers(0, 3), rng.integers(0, 3)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amps = rng.uniform(-1.0, 1.0, (C,))
        wave = np.cos(2.0 * math.pi * (fy * hh + fx * ww) + phase)
        field += amps[:, None, None] * wave[None]
    rms = math.sqrt(float(np.mean(field * field)))
    return field / rms if rms > 0 else field


def generate(cls: str, cfg: HanConfig, seed: int) -> Scenario:
    if cls not in CLASSES:
        raise ConfigError(f"unknown scenario class {cls!r}; expected one of {CLASSES}")
    rng = Rng(seed)
    shape = cfg.shape
    s = base_field(shape, rng)
    if cls == "clean-both":
        rgb, tir = s.copy(), s.copy()
    elif cls == "noisy-tir":
        rgb, tir = s.copy(), s + rng.normal(NOISE_SIGMA, shape)
    elif cls == "noisy-rgb":
        rgb, tir = s + rng.normal(NOISE_SIGMA, shape), s.copy()
    elif cls == "complementary":
        half = cfg.C // 2
        rgb, tir = np.zeros(shape), np.zeros(shape)
        rgb[:half] = s[:half]
        tir[half:] = s[half:]
    else:
        rgb = LOW_CONTRAST_GAIN * s + rng.normal(LOW_CONTRAST_SIGMA, shape)
        tir = LOW_CONTRAST_GAIN * s + rng.normal(LOW_CONTRAST_SIGMA, shape)
    return Scenario(cls, rgb, tir, s, seed)


def make_dataset(counts: dict, cfg: HanConfig, seed: int) -> list[Scenario]:
    """Scenarios class by class in the order of ``counts``; seeds derived per item."""
    out = []
    for cls, count in counts.items():
        if count < 0:
            raise ConfigError(f"count for {cls!r} must be >= 0")
        for _ in range(count):
            out.append(generate(cls, cfg, derive_seed(seed, len(out))))
    return out


DEFAULT_COUNTS = {cls: 4 for cls in CLASSES}


def save_dataset(directory, scenarios, cfg: HanConfig, dtype="float64") -> Path:
    """Write each scenario as three tensor files plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    items = []
    for idx, sc in enumerate(scenarios):
        files = {}
        for part in ("rgb", "tir", "target"):
            name = f"scenario_{idx:04d}_{part}.ftns"
            write_tensor(directory / name, getattr(sc, part), dtype)
            files[part] = name
        items.append({"index": idx, "class": sc.cls, "seed": sc.seed, **files})
    manifest = {"config": cfg.to_dict(), "scenarios": items}
    path = directory / "manifest.json"
    _atomic_write(path, json.dumps(manifest, indent=1).encode("utf-8"))
    return path


def load_dataset(directory) -> tuple[HanConfig, list[Scenario]]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    cfg = HanConfig.from_dict(manifest["config"])
    scenarios = [
        Scenario(item["class"], read_tensor(directory / item["rgb"]), read_tensor(directory / item["tir"]),
                 read_tensor(directory / item["target"]), item["seed"])
        for item in manifest["scenarios"]
    ]
    return cfg, scenarios
