"""Encoder/decoder heads and the assembled multi-task network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor, as_tensor
from ..autodiff import functional as F
from .attention import AttentionRecord, rename
from .blocks import Body
from .config import ModelConfig, TaskSpec
from .nn import Conv2d, ConvTranspose2d, LayerRow, Module

__all__ = ["HighResEncoder", "HighResDecoder", "SREncoder", "SRDecoder", "ActivationTrace", "EdtModel", "build_model"]


class _ResBlock(Module):
    def __init__(self, c: int, rng: np.random.Generator):
        self.conv_a = Conv2d(c, c, 3, rng, name="conv_a")
        self.conv_b = Conv2d(c, c, 3, rng, name="conv_b")

    def __call__(self, x: Tensor) -> Tensor:
        return F.add(x, self.conv_b(F.gelu(self.conv_a(x))))

    def layer_rows(self, hw, prefix):
        ra, hw = self.conv_a.layer_rows(hw)
        rb, hw = self.conv_b.layer_rows(hw)
        return rename(ra + rb, prefix), hw


def _chain(prefix, hw, *layers):
    rows = []
    for layer in layers:
        r, hw = layer.layer_rows(hw)
        rows += r
    return rename(rows, prefix), hw


def _hr_widths(C: int) -> tuple[int, int]:
    return max(1, C // 4), max(1, C // 3)


class HighResEncoder(Module):
    """Full-resolution conv + residual block, then two stride-2 convs to 1/4 size."""

    def __init__(self, C: int, rng: np.random.Generator):
        c0, c1 = _hr_widths(C)
        self.conv_first = Conv2d(3, c0, 3, rng, name="conv_first")
        self.res = _ResBlock(c0, rng)
        self.down1 = Conv2d(c0, c1, 3, rng, stride=2, name="down1")
        self.down2 = Conv2d(c1, C, 3, rng, stride=2, name="down2")

    def __call__(self, x: Tensor, sink=None):
        f = self.conv_first(x)
        if sink is not None:
            sink.append(("head.conv", f, None))
        f0 = self.res(f)
        f1 = F.gelu(self.down1(f0))
        out = self.down2(f1)
        if sink is not None:
            sink.append(("head.out", out, None))
        return out, (f0, f1)

    def layer_rows(self, hw, prefix):
        r0, hw = _chain(prefix, hw, self.conv_first)
        r1, hw = self.res.layer_rows(hw, f"{prefix}.res")
        r2, hw = _chain(prefix, hw, self.down1, self.down2)
        return r0 + r1 + r2, hw


class HighResDecoder(Module):
    """Two transposed convs back to full size with additive encoder skips."""

    def __init__(self, C: int, rng: np.random.Generator):
        c0, c1 = _hr_widths(C)
        self.up1 = ConvTranspose2d(C, c1, 3, rng, name="up1")
        self.up2 = ConvTranspose2d(c1, c0, 3, rng, name="up2")
        self.conv_last = Conv2d(c0, 3, 3, rng, name="conv_last")

    def __call__(self, z: Tensor, skips, sink=None) -> Tensor:
        f0, f1 = skips
        u = F.gelu(F.add(self.up1(z), f1))
        u = F.gelu(F.add(self.up2(u), f0))
        if sink is not None:
            sink.append(("tail.feat", u, None))
        y = self.conv_last(u)
        if sink is not None:
            sink.append(("tail.out", y, None))
        return y

    def layer_rows(self, hw, prefix):
        return _chain(prefix, hw, self.up1, self.up2, self.conv_last)


class SREncoder(Module):
    """Native-resolution conv followed by one residual conv block."""

    def __init__(self, C: int, rng: np.random.Generator):
        self.conv_first = Conv2d(3, C, 3, rng, name="conv_first")
        self.res = _ResBlock(C, rng)

    def __call__(self, x: Tensor, sink=None):
        f = self.conv_first(x)
        if sink is not None:
            sink.append(("head.conv", f, None))
        out = self.res(f)
        if sink is not None:
            sink.append(("head.out", out, None))
        return out, ()

    def layer_rows(self, hw, prefix):
        r0, hw = _chain(prefix, hw, self.conv_first)
        r1, hw = self.res.layer_rows(hw, f"{prefix}.res")
        return r0 + r1, hw


def _upsample_factors(scale: int) -> list[int]:
    if scale == 4:
        return [2, 2]
    return [scale]


class SRDecoder(Module):
    """Conv to ``C * s^2`` channels plus pixel shuffle (twice x2 for x4)."""

    def __init__(self, C: int, scale: int, rng: np.random.Generator):
        self.factors = _upsample_factors(scale)
        self.up = [Conv2d(C, C * s * s, 3, rng, name=f"up.{i}") for i, s in enumerate(self.factors)]
        self.conv_last = Conv2d(C, 3, 3, rng, name="conv_last")

    def __call__(self, z: Tensor, skips=(), sink=None) -> Tensor:
        u = z
        for conv, s in zip(self.up, self.factors):
            u = F.pixel_shuffle(conv(u), s)
        u = F.gelu(u)
        if sink is not None:
            sink.append(("tail.feat", u, None))
        y = self.conv_last(u)
        if sink is not None:
            sink.append(("tail.out", y, None))
        return y

    def layer_rows(self, hw, prefix):
        rows = []
        for conv, s in zip(self.up, self.factors):
            r, hw = conv.layer_rows(hw)
            rows += r
            hw = (hw[0] * s, hw[1] * s)
        r, hw = self.conv_last.layer_rows(hw)
        return rename(rows + r, prefix), hw


@dataclass
class ActivationTrace:
    """Per-layer activations of one forward pass, in network depth order.

    ``arrays[i]`` is channel-first with the batch on axis 0, so a layer's
    activation matrix is ``arrays[i].reshape(batch, -1)``.
    """

    task: str
    labels: list[str] = field(default_factory=list)
    arrays: list[np.ndarray] = field(default_factory=list)
    attention: list[AttentionRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, label: str) -> np.ndarray:
        return self.arrays[self.labels.index(label)]

    def matrices(self) -> list[np.ndarray]:
        return [a.reshape(a.shape[0], -1) for a in self.arrays]

    @classmethod
    def from_sink(cls, task: str, sink) -> "ActivationTrace":
        tr = cls(task)
        for label, t, records in sink:
            data = t.data
            if label.startswith("stage"):
                data = data.transpose(0, 3, 1, 2)
            tr.labels.append(label)
            tr.arrays.append(np.ascontiguousarray(data))
            if records:
                tr.attention.extend(records)
        return tr


class EdtModel(Module):
    """Per-task encoders/decoders around one shared transformer body."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        C = config.channels
        self.encoders: dict[str, Module] = {}
        self.decoders: dict[str, Module] = {}
        for t in config.tasks:
            if t.high_res:
                self.encoders[t.id] = HighResEncoder(C, rng)
                self.decoders[t.id] = HighResDecoder(C, rng)
            else:
                self.encoders[t.id] = SREncoder(C, rng)
                self.decoders[t.id] = SRDecoder(C, t.scale, rng)
        self.body = Body(config, rng)

    def _task(self, task_id) -> TaskSpec:
        tid = task_id.id if isinstance(task_id, TaskSpec) else str(task_id)
        if tid not in self.encoders:
            raise KeyError(f"unknown task {tid!r}; model has {list(self.encoders)}")
        return self.config.task(tid)

    def input_multiple(self, task_id) -> int:
        """Input extents are padded up to a multiple of this."""
        tile = self.config.window.tile
        return 4 * tile if self._task(task_id).high_res else tile

    def forward(self, task_id, x, capture: bool = False):
        """Restore ``x`` of shape ``(B, 3, H, W)``.

        Returns the output tensor, or ``(output, ActivationTrace)`` when
        ``capture`` is set.
        """
        task = self._task(task_id)
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {x.shape}")
        H, W = x.shape[2:]
        m = self.input_multiple(task.id)
        ph, pw = (-H) % m, (-W) % m
        if ph or pw:
            x = F.pad_reflect(x, (0, ph), (0, pw))
        sink = [] if capture else None
        f, skips = self.encoders[task.id](x, sink)
        z = self.body(f, sink)
        y = self.decoders[task.id](z, skips, sink)
        s = task.scale
        if ph or pw:
            y = y[:, :, : H * s, : W * s]
        if capture:
            return y, ActivationTrace.from_sink(task.id, sink)
        return y

    __call__ = forward

    def task_rows(self, task_id, hw: tuple[int, int]) -> list[LayerRow]:
        """Layer table for one task at input extent ``hw`` (after padding)."""
        task = self._task(task_id)
        m = self.input_multiple(task.id)
        hw = tuple(-(-n // m) * m for n in hw)
        enc, fhw = self.encoders[task.id].layer_rows(hw, f"encoders.{task.id}")
        body = self.body.layer_rows(fhw)
        dec, _ = self.decoders[task.id].layer_rows(fhw, f"decoders.{task.id}")
        return enc + body + dec


def build_model(config: ModelConfig, seed: int = 0) -> EdtModel:
    """Instantiate ``config`` with weights drawn from ``default_rng(seed)``."""
    return EdtModel(config, np.random.default_rng(seed))
