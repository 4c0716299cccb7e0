"""Anti-FFN, transformer blocks, stages and the shared body."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor
from ..autodiff import functional as F
from .attention import CrossedLocalAttention, RelativePositionBias, rename
from .config import ModelConfig, WindowSpec
from .nn import Conv2d, LayerNorm, LayerRow, Linear, Module

__all__ = ["AntiFFN", "TransformerBlock", "Stage", "Body"]


def _nchw(x: Tensor) -> Tensor:
    return F.transpose(x, (0, 3, 1, 2))


def _nhwc(x: Tensor) -> Tensor:
    return F.transpose(x, (0, 2, 3, 1))


class AntiFFN(Module):
    """Linear up, act, depthwise 5x5, act, linear down (channel-last)."""

    def __init__(self, channels: int, expansion: int, rng: np.random.Generator, kernel: int = 5):
        hidden = channels * expansion
        self.fc1 = Linear(channels, hidden, rng, name="fc1")
        self.dwconv = Conv2d(hidden, hidden, kernel, rng, padding=kernel // 2, groups=hidden, name="dwconv")
        self.fc2 = Linear(hidden, channels, rng, name="fc2")

    def __call__(self, x: Tensor) -> Tensor:
        h = F.gelu(self.fc1(x))
        h = F.gelu(_nhwc(self.dwconv(_nchw(h))))
        return self.fc2(h)

    def layer_rows(self, hw: tuple[int, int], prefix: str) -> list[LayerRow]:
        n = hw[0] * hw[1]
        dw, _ = self.dwconv.layer_rows(hw)
        return rename(self.fc1.layer_rows(n) + dw + self.fc2.layer_rows(n), prefix)


class TransformerBlock(Module):
    """``x' = x + attn(LN(x))``, ``y = x' + ffn(LN(x'))``."""

    def __init__(
        self,
        channels: int,
        heads: int,
        window: WindowSpec,
        expansion: int,
        shifted: bool,
        rng: np.random.Generator,
        biases: dict[str, RelativePositionBias] | None = None,
    ):
        self.shifted = shifted
        self.norm1 = LayerNorm(channels, name="norm1")
        self.attn = CrossedLocalAttention(channels, heads, window, rng, biases)
        self.norm2 = LayerNorm(channels, name="norm2")
        self.ffn = AntiFFN(channels, expansion, rng)

    def __call__(self, x: Tensor):
        """Return ``(y, x_after_attention, attention_records)``."""
        a, records = self.attn(self.norm1(x), self.shifted)
        x = F.add(x, a)
        y = F.add(x, self.ffn(self.norm2(x)))
        return y, x, records

    def layer_rows(self, hw, prefix: str) -> list[LayerRow]:
        n = hw[0] * hw[1]
        rows = rename(self.norm1.layer_rows(n), prefix)
        rows += self.attn.layer_rows(hw, f"{prefix}.attn")
        rows += rename(self.norm2.layer_rows(n), prefix)
        rows += self.ffn.layer_rows(hw, f"{prefix}.ffn")
        return rows


class Stage(Module):
    """Blocks alternating plain/shifted windows, a conv tail and a stage residual."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        C, heads, win = config.channels, config.heads, config.window
        # one bias table per orientation, shared by every block of the stage
        self.bias = (
            {b: RelativePositionBias(win.size(b), heads, rng) for b in ("h", "v")} if config.rel_pos_bias else {}
        )
        biases = self.bias or None
        self.blocks = [
            TransformerBlock(C, heads, win, config.ffn_expansion, shifted=bool(j % 2), rng=rng, biases=biases)
            for j in range(config.blocks_per_stage)
        ]
        self.conv3 = Conv2d(C, C, 3, rng, name="conv3")
        self.conv1 = Conv2d(C, C, 1, rng, name="conv1")

    def __call__(self, x: Tensor, sink: list | None = None, stage_index: int = 0):
        """``x`` is channel-last; ``sink`` collects ``(label, tensor | record)``."""
        h = x
        for j, blk in enumerate(self.blocks):
            h, mid, records = blk(h)
            if sink is not None:
                for r in records:
                    r.stage, r.block = stage_index, j
                sink.append((f"stage{stage_index}.block{j}.attn", mid, records))
                sink.append((f"stage{stage_index}.block{j}.ffn", h, None))
        c = self.conv1(self.conv3(_nchw(h)))
        return F.add(x, _nhwc(c))

    def layer_rows(self, hw, prefix: str) -> list[LayerRow]:
        rows = []
        for b, bias in self.bias.items():
            rows += bias.layer_rows(f"{prefix}.bias.{b}")
        for j, blk in enumerate(self.blocks):
            rows += blk.layer_rows(hw, f"{prefix}.blocks.{j}")
        r3, _ = self.conv3.layer_rows(hw)
        r1, _ = self.conv1.layer_rows(hw)
        return rows + rename(r3 + r1, prefix)


class Body(Module):
    """Stack of stages with a long skip; works on ``(B, C, H, W)``."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.stages = [Stage(config, rng) for _ in range(config.stages)]

    def __call__(self, x: Tensor, sink: list | None = None) -> Tensor:
        if not self.stages:
            return x
        h = _nhwc(x)
        for i, st in enumerate(self.stages):
            h = st(h, sink, i)
        return F.add(x, _nchw(h))

    def layer_rows(self, hw, prefix: str = "body") -> list[LayerRow]:
        rows = []
        for i, st in enumerate(self.stages):
            rows += st.layer_rows(hw, f"{prefix}.stages.{i}")
        return rows

