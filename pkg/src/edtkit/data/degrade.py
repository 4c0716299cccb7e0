"""Synthetic degradations: bicubic downscaling, Gaussian noise, rain streaks.

Every random draw goes through ``numpy.random.Generator(Philox(seed))``.
Philox is counter-based and numpy's samplers for it are bit-reproducible
across platforms, so a ``(spec, seed)`` pair pins the output exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..model.config import TaskSpec, parse_task
from .resize import bicubic_resize

__all__ = [
    "philox",
    "derive_seed",
    "worker_seed",
    "add_gaussian_noise",
    "RainSpec",
    "RAIN_PRESETS",
    "rain_layer",
    "synth_rain",
    "degrade",
]


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & ((1 << 64) - 1)))


def derive_seed(seed: int, *keys: int) -> int:
    """Stable 64-bit child seed for ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed) & ((1 << 64) - 1)] + [int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def worker_seed(seed: int, worker: int) -> int:
    return int(seed) ^ int(worker)


def add_gaussian_noise(img, sigma: float, seed: int, clip: bool = True) -> np.ndarray:
    """Add i.i.d. ``N(0, (sigma/255)^2)`` noise to an image in [0, 1]."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    out = img + philox(seed).standard_normal(img.shape) * (sigma / 255.0)
    return np.clip(out, 0.0, 1.0) if clip else out


@dataclass(frozen=True)
class RainSpec:
    """Procedural streak model; lengths are in pixels, angles in degrees from horizontal."""

    density: float
    length: tuple[float, float]
    angle: tuple[float, float] = (70.0, 110.0)
    intensity: tuple[float, float] = (0.2, 0.5)
    blur: float = 0.8


RAIN_PRESETS = {
    "light": RainSpec(density=0.001, length=(15.0, 25.0)),
    "heavy": RainSpec(density=0.005, length=(25.0, 40.0)),
}


def rain_layer(shape: tuple[int, int], spec: RainSpec, seed: int) -> np.ndarray:
    """Non-negative ``(H, W)`` streak layer.

    ``round(density * H * W)`` segments with uniform start points, lengths,
    angles and brightness are rasterized at half-pixel steps (overlaps keep
    the brighter streak) and then Gaussian-blurred.
    """
    H, W = shape
    n = int(round(spec.density * H * W))
    layer = np.zeros((H, W))
    if n == 0:
        return layer
    rng = philox(seed)
    y0 = rng.uniform(0, H, n)
    x0 = rng.uniform(0, W, n)
    length = rng.uniform(*spec.length, n)
    theta = np.deg2rad(rng.uniform(*spec.angle, n))
    amp = rng.uniform(*spec.intensity, n)
    for k in range(n):
        t = np.arange(0.0, length[k] + 0.5, 0.5)
        ys = np.rint(y0[k] + t * np.sin(theta[k])).astype(int)
        xs = np.rint(x0[k] + t * np.cos(theta[k])).astype(int)
        ok = (ys >= 0) & (ys < H) & (xs >= 0) & (xs < W)
        ys, xs = ys[ok], xs[ok]
        layer[ys, xs] = np.maximum(layer[ys, xs], amp[k])
    if spec.blur > 0:
        layer = gaussian_filter(layer, spec.blur, mode="constant")
    return np.maximum(layer, 0.0)


def synth_rain(img, intensity: str | RainSpec, seed: int, clip: bool = True) -> np.ndarray:
    """Add a streak layer (same on every channel) to ``(C, H, W)``."""
    if isinstance(intensity, str):
        if intensity not in RAIN_PRESETS:
            raise ValueError(f"rain intensity must be one of {sorted(RAIN_PRESETS)}, got {intensity!r}")
        spec = RAIN_PRESETS[intensity]
    else:
        spec = intensity
    img = np.asarray(img, dtype=np.float64)
    out = img + rain_layer(img.shape[-2:], spec, seed)
    return np.clip(out, 0.0, 1.0) if clip else out


def degrade(clean, task: TaskSpec | str, seed: int) -> np.ndarray:
    """Low-quality counterpart of ``clean`` for ``task``."""
    task = parse_task(task)
    if task.kind == "sr":
        return bicubic_resize(clean, 1.0 / task.scale)
    if task.kind == "denoise":
        return add_gaussian_noise(clean, float(task.parameter), seed)
    return synth_rain(clean, str(task.parameter), seed)
