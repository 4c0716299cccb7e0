"""PSNR on RGB and on the BT.601 luma channel."""

from __future__ import annotations

import numpy as np

__all__ = ["PSNR_CAP", "rgb_to_y", "psnr", "psnr_y"]

PSNR_CAP = 99.0
_Y_WEIGHTS = np.array([65.481, 128.553, 24.966]) / 255.0


def rgb_to_y(img) -> np.ndarray:
    """Studio-swing luma in [16/255, 235/255] from ``(3, H, W)`` RGB in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-3] != 3:
        raise ValueError(f"expected 3 channels, got shape {img.shape}")
    return np.tensordot(_Y_WEIGHTS, img, axes=([0], [-3])) + 16.0 / 255.0


def _crop(a, border):
    return a[..., border:-border, border:-border] if border > 0 else a


def psnr(a, b, border: int = 0) -> float:
    """``10 log10(1 / MSE)`` for images in [0, 1]; identical inputs give the 99 dB cap."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"size mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((_crop(a, border) - _crop(b, border)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def psnr_y(a, b, border: int = 0) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"size mismatch: {a.shape} vs {b.shape}")
    return psnr(rgb_to_y(a), rgb_to_y(b), border)
