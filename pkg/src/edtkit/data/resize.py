"""Separable bicubic resampling.

Kernel: Keys cubic with ``a = -0.5``. Sample ``i`` of the output maps to
input coordinate ``(i + 0.5) / scale - 0.5``. When downscaling the kernel
is stretched by ``1 / scale`` (antialiasing), so its support grows from 4
to ``4 / scale`` taps. Weights are normalized to sum to one and taps that
fall outside the image are mirrored (``-1 -> 0``, ``n -> n - 1``). This
matches MATLAB's ``imresize`` bicubic convention.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

__all__ = ["cubic", "resize_weights", "bicubic_resize", "output_size"]

A = -0.5


def cubic(x: np.ndarray, a: float = A) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _mirror(idx: np.ndarray, n: int) -> np.ndarray:
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx < n, idx, period - 1 - idx)


@lru_cache(maxsize=128)
def resize_weights(n_in: int, n_out: int, scale: float, antialias: bool = True) -> np.ndarray:
    """Dense ``(n_out, n_in)`` interpolation matrix for one axis."""
    if n_out < 1 or n_in < 1:
        raise ValueError(f"degenerate resize {n_in} -> {n_out}")
    stretch = scale if (antialias and scale < 1) else 1.0
    width = 2.0 / stretch
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    taps = int(math.ceil(2 * width)) + 2
    left = np.floor(centers - width).astype(np.int64)
    idx = left[:, None] + np.arange(taps)[None, :]
    w = stretch * cubic((centers[:, None] - idx) * stretch)
    w /= w.sum(axis=1, keepdims=True)
    M = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(M, (rows, _mirror(idx, n_in).ravel()), w.ravel())
    M.setflags(write=False)
    return M


def output_size(n: int, scale: float) -> int:
    return int(math.ceil(n * scale - 1e-9))


def bicubic_resize(
    img,
    scale: float,
    size: tuple[int, int] | None = None,
    antialias: bool = True,
    clip: bool = True,
) -> np.ndarray:
    """Resize ``(C, H, W)`` or ``(H, W)`` by ``scale`` (or to ``size``).

    Cubic overshoot is clipped back to [0, 1] unless ``clip`` is false.
    """
    img = np.asarray(img, dtype=np.float64)
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    H, W = img.shape[-2:]
    Ho, Wo = size if size is not None else (output_size(H, scale), output_size(W, scale))
    if Ho < 1 or Wo < 1:
        raise ValueError(f"resize of {H}x{W} by {scale} gives an empty image")
    if (Ho, Wo) == (H, W) and scale == 1:
        return np.clip(img, 0.0, 1.0) if clip else img.copy()
    sh, sw = (Ho / H, Wo / W) if size is not None else (float(scale), float(scale))
    Mh = resize_weights(H, Ho, sh, antialias)
    Mw = resize_weights(W, Wo, sw, antialias)
    out = np.einsum("oh,...hw,pw->...op", Mh, img, Mw, optimize=True)
    return np.clip(out, 0.0, 1.0) if clip else out
