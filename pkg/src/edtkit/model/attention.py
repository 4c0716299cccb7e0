"""Window partitioning and (shifted) crossed local multi-head attention.

The channel dimension is split in two halves. The first half attends inside
horizontal ``h x w`` windows, the second inside vertical ``w x h`` windows;
the two results are concatenated and fused by a linear projection. In
shifted blocks both window grids are cyclically displaced by half a window
and attention across the wrap-around seam is masked out.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from ..autodiff import Tensor
from ..autodiff import functional as F
from .config import WindowSpec
from .nn import LayerRow, Linear, Module, param

__all__ = [
    "WindowLayout",
    "window_partition",
    "window_partition_nhwc",
    "shifted_window_mask",
    "relative_position_index",
    "RelativePositionBias",
    "AttentionRecord",
    "CrossedLocalAttention",
    "attention_macs",
]

_MASK = -1e9


@dataclass(frozen=True)
class WindowLayout:
    """Bookkeeping needed to undo a partition."""

    batch: int
    height: int
    width: int
    window: tuple[int, int]
    shift: tuple[int, int]
    pad: tuple[int, int]

    @property
    def padded(self) -> tuple[int, int]:
        return self.height + self.pad[0], self.width + self.pad[1]

    @property
    def grid(self) -> tuple[int, int]:
        hp, wp = self.padded
        return hp // self.window[0], wp // self.window[1]

    @property
    def num_windows(self) -> int:
        gh, gw = self.grid
        return gh * gw

    def reverse_nhwc(self, windows: Tensor) -> Tensor:
        """``(B * nW, a * b, C) -> (B, H, W, C)``."""
        a, b = self.window
        gh, gw = self.grid
        C = windows.shape[-1]
        x = F.reshape(windows, (self.batch, gh, gw, a, b, C))
        x = F.transpose(x, (0, 1, 3, 2, 4, 5))
        x = F.reshape(x, (self.batch, gh * a, gw * b, C))
        if self.shift != (0, 0):
            x = F.roll(x, self.shift, (1, 2))
        if self.pad != (0, 0):
            x = x[:, : self.height, : self.width, :]
        return x

    def reverse(self, windows: Tensor) -> Tensor:
        """``(B * nW, a * b, C) -> (B, C, H, W)``."""
        return F.transpose(self.reverse_nhwc(windows), (0, 3, 1, 2))


def window_partition_nhwc(x: Tensor, window: tuple[int, int], shift: tuple[int, int] = (0, 0)):
    """Channel-last variant of :func:`window_partition`."""
    a, b = window
    if a < 1 or b < 1:
        raise ValueError(f"window extents must be positive, got {window}")
    B, H, W, C = x.shape
    pad = ((-H) % a, (-W) % b)
    if pad != (0, 0):
        # reflect-pad the spatial axes, which sit at positions 1 and 2 here
        x = F.transpose(F.pad_reflect(F.transpose(x, (0, 3, 1, 2)), (0, pad[0]), (0, pad[1])), (0, 2, 3, 1))
    if shift != (0, 0):
        x = F.roll(x, (-shift[0], -shift[1]), (1, 2))
    layout = WindowLayout(B, H, W, (a, b), tuple(shift), pad)
    gh, gw = layout.grid
    x = F.reshape(x, (B, gh, a, gw, b, C))
    x = F.transpose(x, (0, 1, 3, 2, 4, 5))
    return F.reshape(x, (B * gh * gw, a * b, C)), layout


def window_partition(x: Tensor, window: tuple[int, int], shift: tuple[int, int] = (0, 0)):
    """Split ``(B, C, H, W)`` into ``(B * nW, a * b, C)`` windows.

    When ``shift`` is non-zero the map is cyclically shifted by ``-shift``
    first. Extents that are not multiples of the window are reflect-padded;
    ``layout.reverse`` crops them again, so ``reverse(partition(x)) == x``.
    """
    return window_partition_nhwc(F.transpose(x, (0, 2, 3, 1)), window, shift)


@lru_cache(maxsize=64)
def shifted_window_mask(padded: tuple[int, int], window: tuple[int, int], shift: tuple[int, int]) -> np.ndarray:
    """Additive ``(nW, N, N)`` mask that blocks attention across the roll seam."""
    hp, wp = padded
    a, b = window
    labels = np.zeros((hp, wp), dtype=np.int64)
    rows = [slice(0, hp - a), slice(hp - a, hp - shift[0]), slice(hp - shift[0], hp)] if shift[0] else [slice(None)]
    cols = [slice(0, wp - b), slice(wp - b, wp - shift[1]), slice(wp - shift[1], wp)] if shift[1] else [slice(None)]
    n = 0
    for r in rows:
        for c in cols:
            labels[r, c] = n
            n += 1
    lw = labels.reshape(hp // a, a, wp // b, b).transpose(0, 2, 1, 3).reshape(-1, a * b)
    same = lw[:, :, None] == lw[:, None, :]
    return np.where(same, 0.0, _MASK)


@lru_cache(maxsize=64)
def relative_position_index(window: tuple[int, int]) -> np.ndarray:
    """``(N, N)`` index into a ``(2a-1)(2b-1)`` offset table."""
    a, b = window
    yy, xx = np.meshgrid(np.arange(a), np.arange(b), indexing="ij")
    coords = np.stack([yy.ravel(), xx.ravel()])
    rel = coords[:, :, None] - coords[:, None, :]
    return (rel[0] + a - 1) * (2 * b - 1) + (rel[1] + b - 1)


class RelativePositionBias(Module):
    """Learned per-head bias indexed by the query-key offset in a window."""

    def __init__(self, window: tuple[int, int], heads: int, rng: np.random.Generator):
        self.window = tuple(window)
        a, b = self.window
        self.table = param(np.clip(rng.standard_normal((heads, (2 * a - 1) * (2 * b - 1))) * 0.02, -0.04, 0.04))

    def __call__(self) -> Tensor:
        return F.take(self.table, relative_position_index(self.window), axis=1)

    def layer_rows(self, prefix: str) -> list[LayerRow]:
        return [LayerRow(f"{prefix}.table", "rel_pos_bias", self.table.size, 0)]


@dataclass
class AttentionRecord:
    """Attention weights of one branch of one block, kept for diagnostics."""

    branch: str
    window: tuple[int, int]
    shifted: bool
    weights: np.ndarray  # (B * nW, heads, N, N)
    layout: WindowLayout
    stage: int = -1
    block: int = -1


def attention_macs(H: int, W: int, C: int, h: int, w: int) -> int:
    """Multiply-accumulates of one crossed attention module: 4HWC^2 + 2hwHWC."""
    return 4 * H * W * C * C + 2 * h * w * H * W * C


class CrossedLocalAttention(Module):
    """(Shifted) crossed local attention on channel-last tokens.

    One ``C -> 3C`` projection produces queries, keys and values; their first
    ``C/2`` channels feed the horizontal branch and the rest the vertical
    one. With ``d = (C/2) / heads`` this makes the module cost exactly
    :func:`attention_macs`.
    """

    def __init__(
        self,
        channels: int,
        heads: int,
        window: WindowSpec,
        rng: np.random.Generator,
        biases: dict[str, RelativePositionBias] | None = None,
    ):
        if channels % 2:
            raise ValueError(f"channels must be even, got {channels}")
        if (channels // 2) % heads:
            raise ValueError(f"heads={heads} must divide channels/2={channels // 2}")
        self.channels, self.heads, self.window = channels, heads, window
        self.qkv = Linear(channels, 3 * channels, rng, name="qkv")
        self.proj = Linear(channels, channels, rng, name="proj")
        # shared with every block of a stage, so not registered here
        self._biases = biases

    def branch(self, q, k, v, branch: str, shifted: bool = False):
        """Windowed MSA of one orientation on channel-last ``(B, H, W, C/2)`` inputs."""
        a, b = self.window.size(branch)
        shift = self.window.shift(branch) if shifted else (0, 0)
        B = q.shape[0]
        half = self.channels // 2
        d = half // self.heads
        qw, layout = window_partition_nhwc(q, (a, b), shift)
        kw, _ = window_partition_nhwc(k, (a, b), shift)
        vw, _ = window_partition_nhwc(v, (a, b), shift)
        nwb, N = qw.shape[0], qw.shape[1]

        def heads(t):
            return F.transpose(F.reshape(t, (nwb, N, self.heads, d)), (0, 2, 1, 3))

        qh, kh, vh = heads(qw), heads(kw), heads(vw)
        logits = F.mul(F.matmul(qh, F.transpose(kh, (0, 1, 3, 2))), d**-0.5)
        if self._biases is not None:
            logits = F.add(logits, F.reshape(self._biases[branch](), (1, self.heads, N, N)))
        if shifted and shift != (0, 0):
            mask = shifted_window_mask(layout.padded, (a, b), shift)
            nw = layout.num_windows
            logits = F.reshape(logits, (B, nw, self.heads, N, N))
            logits = F.add(logits, Tensor(mask[None, :, None]))
            logits = F.reshape(logits, (nwb, self.heads, N, N))
        attn = F.softmax(logits, axis=-1)
        out = F.matmul(attn, vh)
        out = F.reshape(F.transpose(out, (0, 2, 1, 3)), (nwb, N, half))
        record = AttentionRecord(branch, (a, b), shifted, attn.data, layout)
        return layout.reverse_nhwc(out), record

    def __call__(self, x: Tensor, shifted: bool = False):
        """``x`` is ``(B, H, W, C)``; returns ``(y, [h_record, v_record])``."""
        C = self.channels
        half = C // 2
        qkv = self.qkv(x)
        q, k, v = qkv[..., :C], qkv[..., C : 2 * C], qkv[..., 2 * C :]
        yh, rh = self.branch(q[..., :half], k[..., :half], v[..., :half], "h", shifted)
        yv, rv = self.branch(q[..., half:], k[..., half:], v[..., half:], "v", shifted)
        y = self.proj(F.concat([yh, yv], axis=-1))
        return y, [rh, rv]

    def layer_rows(self, hw: tuple[int, int], prefix: str) -> list[LayerRow]:
        H, W = hw
        C = self.channels
        params = self.qkv.weight.size + self.qkv.bias.size + self.proj.weight.size + self.proj.bias.size
        return [LayerRow(prefix, "crossed_attention", params, attention_macs(H, W, C, self.window.h, self.window.w))]


def rename(rows: list[LayerRow], prefix: str) -> list[LayerRow]:
    return [replace(r, name=f"{prefix}.{r.name}") for r in rows]
