"""PNG I/O, directory datasets, synthetic images and patch sampling."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import gaussian_filter

from ..model.config import TaskSpec, parse_task
from .degrade import degrade, derive_seed, philox

__all__ = [
    "load_png",
    "save_png",
    "synthetic_image",
    "write_synthetic_dataset",
    "list_images",
    "write_manifest",
    "read_manifest",
    "load_dataset",
    "load_paired",
    "dihedral",
    "PatchBatch",
    "sample_patches",
]

_PATTERNS = ("*.png", "*.PNG")


def load_png(path: str | Path) -> np.ndarray:
    """Read an image as ``(3, H, W)`` float64 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.clip(arr.transpose(2, 0, 1), 0.0, 1.0)


def save_png(path: str | Path, img) -> None:
    """Write ``(3, H, W)`` in [0, 1] as 8-bit RGB (values are clamped)."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if arr.ndim == 2:
        arr = np.repeat(arr[None], 3, axis=0)
    u8 = np.rint(arr.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def synthetic_image(size: tuple[int, int], seed: int) -> np.ndarray:
    """Smooth colour field plus hard-edged shapes and stripes, in [0, 1]."""
    H, W = size
    rng = philox(seed)
    base = gaussian_filter(rng.standard_normal((3, H, W)), sigma=(0, H / 8, W / 8), mode="wrap")
    base = 0.5 + 0.25 * base / (base.std() + 1e-12)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    img = base
    for _ in range(int(rng.integers(3, 7))):
        colour = rng.uniform(0, 1, (3, 1, 1))
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        if rng.uniform() < 0.5:
            r = rng.uniform(0.08, 0.25) * min(H, W)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            hh, ww = rng.uniform(0.1, 0.4) * H, rng.uniform(0.1, 0.4) * W
            mask = (np.abs(yy - cy) < hh / 2) & (np.abs(xx - cx) < ww / 2)
        img = np.where(mask[None], 0.6 * colour + 0.4 * img, img)
    freq = rng.uniform(0.15, 0.6)
    ang = rng.uniform(0, np.pi)
    stripes = 0.08 * np.sin(freq * (np.cos(ang) * xx + np.sin(ang) * yy))
    return np.clip(img + stripes[None], 0.0, 1.0)


def write_synthetic_dataset(root: str | Path, count: int, size: tuple[int, int], seed: int = 0) -> list[Path]:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        p = root / f"img_{i:04d}.png"
        save_png(p, synthetic_image(size, derive_seed(seed, i)))
        paths.append(p)
    write_manifest(root)
    return paths


def list_images(root: str | Path) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    return sorted({p for pat in _PATTERNS for p in root.glob(pat)})


def write_manifest(root: str | Path, name: str = "manifest.jsonl") -> Path:
    """JSON lines ``{"path", "width", "height"}`` for every readable PNG."""
    root = Path(root)
    lines = []
    for p in list_images(root):
        try:
            with Image.open(p) as im:
                w, h = im.size
        except (OSError, UnidentifiedImageError):
            continue
        lines.append(json.dumps({"path": p.name, "width": w, "height": h}, sort_keys=True))
    out = root / name
    out.write_text("".join(line + "\n" for line in lines))
    return out


def read_manifest(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def _read_many(paths: Sequence[Path]) -> tuple[list[np.ndarray], list[str]]:
    imgs, names = [], []
    for p in paths:
        try:
            imgs.append(load_png(p))
            names.append(p.name)
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            warnings.warn(f"skipping unreadable image {p}: {exc}", stacklevel=3)
    return imgs, names


def load_dataset(root: str | Path) -> list[np.ndarray]:
    imgs, _ = _read_many(list_images(root))
    return imgs


def load_paired(root: str | Path) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """``(name, degraded, clean)`` triples from ``root/clean`` and ``root/degraded``."""
    root = Path(root)
    clean_dir, deg_dir = root / "clean", root / "degraded"
    if not clean_dir.is_dir() or not deg_dir.is_dir():
        raise FileNotFoundError(f"{root} needs clean/ and degraded/ subdirectories")
    out = []
    for p in list_images(clean_dir):
        q = deg_dir / p.name
        if not q.exists():
            warnings.warn(f"no degraded counterpart for {p.name}", stacklevel=2)
            continue
        out.append((p.name, load_png(q), load_png(p)))
    if not out:
        raise ValueError(f"no matching pairs under {root}")
    return out


def dihedral(img: np.ndarray, k: int) -> np.ndarray:
    """One of the 8 flips/rotations of the last two axes (``k`` in 0..7)."""
    out = np.rot90(img, k % 4, axes=(-2, -1))
    if k >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


@dataclass
class PatchBatch:
    degraded: np.ndarray
    clean: np.ndarray
    # (image index, top, left, dihedral index) per patch, in clean-image pixels
    coords: list[tuple[int, int, int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.coords)


def sample_patches(
    dataset,
    task: TaskSpec | str,
    patch: int,
    count: int,
    seed: int,
    augment: bool = True,
) -> PatchBatch:
    """Random ``(degraded, clean)`` crops.

    ``patch`` is the degraded (input) size; for SR the clean crop is
    ``scale * patch``. The clean crop is augmented first and the degraded
    patch is derived from it, so re-degrading reproduces it exactly.
    ``dataset`` is a directory or a sequence of ``(3, H, W)`` arrays.
    """
    task = parse_task(task)
    s = task.scale
    cp = patch * s
    if isinstance(dataset, (str, Path)):
        imgs, names = _read_many(list_images(dataset))
    else:
        imgs = [np.asarray(a, dtype=np.float64) for a in dataset]
        names = [str(i) for i in range(len(imgs))]
    usable = []
    for i, (img, nm) in enumerate(zip(imgs, names)):
        if img.shape[-2] < cp or img.shape[-1] < cp:
            warnings.warn(f"skipping {nm}: {img.shape[-2]}x{img.shape[-1]} is smaller than {cp}x{cp}", stacklevel=2)
        else:
            usable.append(i)
    if not usable:
        raise ValueError(f"no image is at least {cp}x{cp}")
    deg = np.empty((count, 3, patch, patch))
    clean = np.empty((count, 3, cp, cp))
    coords = []
    rng = philox(seed)
    for k in range(count):
        i = usable[int(rng.integers(len(usable)))]
        img = imgs[i]
        top = int(rng.integers(img.shape[-2] - cp + 1))
        left = int(rng.integers(img.shape[-1] - cp + 1))
        d = int(rng.integers(8)) if augment else 0
        c = dihedral(img[:, top : top + cp, left : left + cp], d)
        clean[k] = c
        deg[k] = degrade(c, task, derive_seed(seed, k))
        coords.append((i, top, left, d))
    return PatchBatch(deg, clean, coords)
