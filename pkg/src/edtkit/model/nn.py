"""Parameter-holding layers on top of the autodiff engine.

Each layer reports its own cost through ``layer_rows(hw)``, mirroring the
``flops(x_size)`` convention common in window-transformer code: rows are
``LayerRow(name, kind, params, macs)`` and the second return value is the
output spatial extent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..autodiff import Tensor
from ..autodiff import functional as F

__all__ = ["LayerRow", "Module", "Linear", "Conv2d", "ConvTranspose2d", "LayerNorm", "param"]


@dataclass(frozen=True)
class LayerRow:
    name: str
    kind: str
    params: int
    macs: int


def param(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class Module:
    """Attribute-walking parameter registry.

    Attributes holding :class:`Tensor` parameters, sub-modules, or lists and
    dicts of sub-modules are registered. Names starting with ``_`` are
    skipped, which is how shared parameters avoid double registration.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        seen: set[int] = set()
        for name, p in self._walk(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def _walk(self, prefix: str):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val._walk(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, m in enumerate(val):
                    if isinstance(m, Module):
                        yield from m._walk(f"{name}.{i}.")
            elif isinstance(val, dict):
                for k, m in val.items():
                    if isinstance(m, Module):
                        yield from m._walk(f"{name}.{k}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy matching arrays in; return names that were not found."""
        missing = []
        for n, p in self.named_parameters():
            if n in state:
                arr = np.asarray(state[n], dtype=np.float64)
                if arr.shape != p.shape:
                    raise ValueError(f"{n}: shape {arr.shape} does not match {p.shape}")
                p.data = arr.copy()
            else:
                missing.append(n)
        if strict and missing:
            raise KeyError(f"missing parameters: {missing[:5]}{'...' if len(missing) > 5 else ''}")
        return missing


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class Linear(Module):
    """Position-wise affine map over the last axis; weight is ``(in, out)``."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, name: str = "linear"):
        self.name = name
        self.weight = param(np.clip(rng.standard_normal((cin, cout)) * 0.02, -0.04, 0.04))
        self.bias = param(np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return F.add(F.matmul(x, self.weight), self.bias)

    def layer_rows(self, positions: int) -> list[LayerRow]:
        cin, cout = self.weight.shape
        return [LayerRow(self.name, "linear", cin * cout + cout, positions * cin * cout)]


class Conv2d(Module):
    def __init__(
        self,
        cin: int,
        cout: int,
        k: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int | None = None,
        groups: int = 1,
        name: str = "conv",
    ):
        self.name = name
        self.stride, self.groups = stride, groups
        self.padding = k // 2 if padding is None else padding
        fan_in = cin // groups * k * k
        self.weight = param(_uniform(rng, fan_in, (cout, cin // groups, k, k)))
        self.bias = param(_uniform(rng, fan_in, (cout,)))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def out_hw(self, hw: tuple[int, int]) -> tuple[int, int]:
        k = self.weight.shape[-1]
        return tuple((n + 2 * self.padding - k) // self.stride + 1 for n in hw)

    def layer_rows(self, hw):
        O, cg, kh, kw = self.weight.shape
        ho, wo = self.out_hw(hw)
        return [LayerRow(self.name, "conv2d", self.weight.size + O, ho * wo * O * cg * kh * kw)], (ho, wo)


class ConvTranspose2d(Module):
    """Stride-``s`` transposed conv; defaults give an exact ``s``-fold upsample."""

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 2, name: str = "convT"):
        self.name = name
        self.stride = stride
        self.padding = (k - 1) // 2
        self.output_padding = stride - 1 + 2 * self.padding - (k - 1)
        fan_in = cout * k * k
        self.weight = param(_uniform(rng, fan_in, (cin, cout, k, k)))
        self.bias = param(_uniform(rng, fan_in, (cout,)))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d_transposed(x, self.weight, self.bias, self.stride, self.padding, self.output_padding)

    def layer_rows(self, hw):
        Ci, O, kh, kw = self.weight.shape
        # every input cell scatters a Ci x O x kh x kw product; output zeros are not counted
        macs = hw[0] * hw[1] * Ci * O * kh * kw
        return [LayerRow(self.name, "conv2d_transposed", self.weight.size + O, macs)], (hw[0] * self.stride, hw[1] * self.stride)


class LayerNorm(Module):
    def __init__(self, c: int, eps: float = 1e-5, name: str = "norm"):
        self.name = name
        self.eps = eps
        self.gamma = param(np.ones(c))
        self.beta = param(np.zeros(c))

    def __call__(self, x: Tensor) -> Tensor:
        return F.layernorm(x, self.gamma, self.beta, self.eps)

    def layer_rows(self, positions: int) -> list[LayerRow]:
        return [LayerRow(self.name, "layernorm", 2 * self.gamma.size, 0)]
