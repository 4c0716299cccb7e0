"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Tensor` is a thin immutable wrapper around a row-major float64
array. Operations executed while a :class:`Graph` is active are appended to
its tape together with a vector-Jacobian closure; :meth:`Graph.backward`
walks the tape in reverse. With no active graph, operations run eagerly and
record nothing, which is the inference path.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "NonFiniteError",
    "as_tensor",
    "current_graph",
    "no_grad",
]

DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class Tensor:
    """Dense n-dimensional float64 array with an optional trainable flag."""

    __slots__ = ("data", "requires_grad", "name", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE, copy=True) if not isinstance(data, np.ndarray) else data
        if arr.dtype != DTYPE:
            arr = arr.astype(DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar (implemented in functional) --------------------------
    def __add__(self, other):
        from . import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F

        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F

        if isinstance(other, Tensor):
            raise TypeError("division is only supported by Python scalars")
        return F.mul(self, 1.0 / float(other))

    def __neg__(self):
        from . import functional as F

        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F

        return F.matmul(self, other)

    def __getitem__(self, index):
        from . import functional as F

        return F.getitem(self, index)

    def reshape(self, *shape):
        from . import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        from . import functional as F

        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import functional as F

        return F.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


VJP = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class _Node:
    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op: str, inputs: tuple[int, ...], output: Tensor, vjp: VJP | None):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


_state = threading.local()


def current_graph() -> "Graph | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Graph:
    """Append-only tape of operations.

    Use as a context manager; every op executed inside is recorded. Nodes only
    ever reference earlier nodes, so the tape is acyclic by construction and
    reverse order is a valid topological order.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._index: dict[int, int] = {}

    def __enter__(self) -> "Graph":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def node_of(self, t: Tensor) -> int | None:
        return self._index.get(id(t))

    @property
    def parameters(self) -> list[Tensor]:
        """Trainable leaves touched by the recorded computation."""
        return [n.output for n in self.nodes if n.op == "leaf" and n.output.requires_grad]

    def _leaf(self, t: Tensor) -> int:
        idx = self._index.get(id(t))
        if idx is None:
            idx = len(self.nodes)
            self.nodes.append(_Node("leaf", (), t, None))
            self._index[id(t)] = idx
        return idx

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, vjp: VJP) -> None:
        ids = tuple(self._index[id(t)] if id(t) in self._index else self._leaf(t) for t in inputs)
        self._index[id(output)] = len(self.nodes)
        self.nodes.append(_Node(op, ids, output, vjp))

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
        """Return d(loss)/d(t) for every trainable leaf (or for ``wrt``).

        Parameters that the loss does not depend on get exact zeros.
        """
        if loss.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        root = self._index.get(id(loss))
        if root is None:
            raise ValueError("loss was not produced inside this graph")

        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[root] = np.ones_like(loss.data)
        for i in range(root, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            in_grads = node.vjp(g)
            for j, gj in zip(node.inputs, in_grads):
                if gj is None:
                    continue
                if not np.all(np.isfinite(gj)):
                    raise NonFiniteError(f"non-finite gradient flowing out of {node.op}")
                grads[j] = gj if grads[j] is None else grads[j] + gj

        targets = list(wrt) if wrt is not None else self.parameters
        out: dict[Tensor, np.ndarray] = {}
        for t in targets:
            idx = self._index.get(id(t))
            g = grads[idx] if idx is not None else None
            out[t] = np.zeros_like(t.data) if g is None else g.reshape(t.shape)
        return out


class no_grad:
    """Context manager that suspends recording on the active graph."""

    def __enter__(self):
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        self._saved = list(stack)
        stack.clear()
        return self

    def __exit__(self, *exc):
        _state.stack[:] = self._saved
