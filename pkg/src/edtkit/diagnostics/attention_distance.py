"""Attention-weighted query-key distances per head.

For every query the expected distance to its keys under the attention
distribution is computed; a head's mean and std are taken over all
``(window, query)`` pairs. Distances are Euclidean in feature-grid cells.
Shifted-window blocks are excluded and carry no values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

__all__ = [
    "ShiftedWindowError",
    "window_distances",
    "attention_distance",
    "DistanceRow",
    "AttentionProfile",
    "attention_profile",
]


class ShiftedWindowError(ValueError):
    """Distances are not recorded for shifted windows."""


@lru_cache(maxsize=64)
def window_distances(window: tuple[int, int]) -> np.ndarray:
    """``(N, N)`` Euclidean distances between cells of an ``a x b`` window."""
    a, b = window
    yy, xx = np.meshgrid(np.arange(a), np.arange(b), indexing="ij")
    pos = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    d = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    d.setflags(write=False)
    return d


def attention_distance(weights, window: tuple[int, int], shifted: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Per-head ``(mean, std)`` of attention distance.

    ``weights`` has shape ``(N, N)``, ``(heads, N, N)`` or
    ``(windows, heads, N, N)`` with rows summing to one.
    """
    if shifted:
        raise ShiftedWindowError("attention distance is not recorded for shifted windows")
    w = np.asarray(weights, dtype=np.float64)
    N = window[0] * window[1]
    if w.shape[-2:] != (N, N):
        raise ValueError(f"weights {w.shape} do not match a {window} window")
    w = w.reshape((-1,) + w.shape[-3:] if w.ndim >= 3 else (1, 1, N, N))
    per_query = np.einsum("whqk,qk->whq", w, window_distances(tuple(window)))
    per_query = per_query.transpose(1, 0, 2).reshape(w.shape[1], -1)
    return per_query.mean(axis=1), per_query.std(axis=1)


@dataclass(frozen=True)
class DistanceRow:
    stage: int
    block: int
    branch: str
    head: int
    mean: float
    std: float
    excluded: bool


class AttentionProfile:
    """Per (stage, block, branch, head) distance records."""

    columns = ("stage", "block", "branch", "head", "mean", "std", "excluded")

    def __init__(self, rows: list[DistanceRow] | None = None):
        self.rows = list(rows or [])

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def recorded(self) -> list[DistanceRow]:
        return [r for r in self.rows if not r.excluded]

    def lookup(self, stage: int, block: int, branch: str) -> list[DistanceRow]:
        return [r for r in self.rows if (r.stage, r.block, r.branch) == (stage, block, branch)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.columns)
            for r in self.rows:
                mean = "" if r.excluded else f"{r.mean:.12g}"
                std = "" if r.excluded else f"{r.std:.12g}"
                wr.writerow([r.stage, r.block, r.branch, r.head, mean, std, int(r.excluded)])


def attention_profile(records) -> AttentionProfile:
    """Build a profile from the attention records of a captured trace.

    Records of the same (stage, block, branch) from several forward passes
    are pooled into one population.
    """
    pooled: dict[tuple[int, int, str], list] = {}
    meta = {}
    for rec in records:
        key = (rec.stage, rec.block, rec.branch)
        pooled.setdefault(key, []).append(rec.weights)
        meta[key] = rec
    rows = []
    for key in sorted(pooled, key=lambda k: (k[0], k[1], k[2])):
        rec = meta[key]
        heads = rec.weights.shape[1]
        if rec.shifted:
            rows += [DistanceRow(*key, h, float("nan"), float("nan"), True) for h in range(heads)]
            continue
        mean, std = attention_distance(np.concatenate(pooled[key], axis=0), rec.window)
        rows += [DistanceRow(*key, h, float(mean[h]), float(std[h]), False) for h in range(heads)]
    return AttentionProfile(rows)
