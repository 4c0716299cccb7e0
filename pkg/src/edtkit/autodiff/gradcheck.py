"""Central finite-difference verification of :meth:`Graph.backward`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .tensor import Graph, NonFiniteError, Tensor, no_grad

__all__ = ["finite_diff_check", "GradCase", "GRAD_CASES", "run_grad_cases"]


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(numeric), initial=0.0), np.max(np.abs(analytic), initial=0.0))
    diff = np.max(np.abs(analytic - numeric), initial=0.0)
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)


def finite_diff_check(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    step: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Compare backward() against central differences and return the error.

    The error is ``max|analytic - numeric| / max(|analytic|, |numeric|)``
    taken over every checked coordinate of every input, i.e. relative to the
    gradient's own scale. ``max_coords`` caps the coordinates checked per
    input (sampled without replacement) for large parameter sets.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    with Graph() as g:
        loss = f(*xs)
    analytic = g.backward(loss, wrt=xs)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in xs:
        base = t.data
        n = base.size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        num = np.empty(len(coords))
        work = base.copy()
        flat = work.reshape(-1)
        t.data = work
        try:
            with no_grad():
                for k, c in enumerate(coords):
                    orig = flat[c]
                    flat[c] = orig + step
                    fp = f(*xs).item()
                    flat[c] = orig - step
                    fm = f(*xs).item()
                    flat[c] = orig
                    if not (np.isfinite(fp) and np.isfinite(fm)):
                        raise NonFiniteError("objective is non-finite near the check point")
                    num[k] = (fp - fm) / (2 * step)
        finally:
            t.data = base
        worst = max(worst, _rel_error(analytic[t].reshape(-1)[coords], num))
    return worst


@dataclass(frozen=True)
class GradCase:
    name: str
    build: Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[Tensor]]]
    step: float = 1e-6
    max_coords: int | None = None


def _proj(rng, shape):
    return Tensor(rng.standard_normal(shape))


def _unary(op, shape, sample=None):
    def build(rng):
        x = Tensor(sample(rng, shape) if sample else rng.standard_normal(shape), requires_grad=True)
        r = _proj(rng, op(x).shape)
        return (lambda x: F.sum(F.mul(op(x), r))), [x]

    return build


def _case_matmul(rng):
    a = Tensor(rng.standard_normal((5, 7)), requires_grad=True)
    b = Tensor(rng.standard_normal((7, 3)), requires_grad=True)
    r = _proj(rng, (5, 3))
    return (lambda a, b: F.sum(F.mul(F.matmul(a, b), r))), [a, b]


def _case_bmm(rng):
    a = Tensor(rng.standard_normal((2, 3, 4, 5)), requires_grad=True)
    b = Tensor(rng.standard_normal((5, 2)), requires_grad=True)
    r = _proj(rng, (2, 3, 4, 2))
    return (lambda a, b: F.sum(F.mul(F.matmul(a, b), r))), [a, b]


def _conv_case(stride, padding, groups, cin=4, cout=6, k=3, size=(7, 6)):
    def build(rng):
        x = Tensor(rng.standard_normal((2, cin) + size), requires_grad=True)
        w = Tensor(rng.standard_normal((cout, cin // groups, k, k)) * 0.5, requires_grad=True)
        b = Tensor(rng.standard_normal(cout), requires_grad=True)
        y = F.conv2d(x, w, b, stride=stride, padding=padding, groups=groups)
        r = _proj(rng, y.shape)
        return (lambda x, w, b: F.sum(F.mul(F.conv2d(x, w, b, stride, padding, groups), r))), [x, w, b]

    return build


def _case_convT(rng):
    x = Tensor(rng.standard_normal((2, 4, 3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.5, requires_grad=True)
    b = Tensor(rng.standard_normal(3), requires_grad=True)
    f = lambda x, w, b: F.conv2d_transposed(x, w, b, stride=2, padding=1, output_padding=1)  # noqa: E731
    r = _proj(rng, f(x, w, b).shape)
    return (lambda x, w, b: F.sum(F.mul(f(x, w, b), r))), [x, w, b]


def _case_layernorm(rng):
    x = Tensor(rng.standard_normal((3, 4, 6)), requires_grad=True)
    gm = Tensor(1 + 0.1 * rng.standard_normal(6), requires_grad=True)
    bt = Tensor(0.1 * rng.standard_normal(6), requires_grad=True)
    r = _proj(rng, (3, 4, 6))
    return (lambda x, gm, bt: F.sum(F.mul(F.layernorm(x, gm, bt), r))), [x, gm, bt]


def _case_l1(rng):
    target = Tensor(rng.standard_normal((2, 3, 4, 4)))
    # residuals bounded away from the kink at zero
    offs = rng.uniform(0.1, 1.0, target.shape) * rng.choice([-1.0, 1.0], target.shape)
    pred = Tensor(target.data + offs, requires_grad=True)
    return (lambda p: F.l1_loss(p, target)), [pred]


def _case_attention(rng):
    q = Tensor(rng.standard_normal((2, 5, 4)), requires_grad=True)
    k = Tensor(rng.standard_normal((2, 5, 4)), requires_grad=True)
    v = Tensor(rng.standard_normal((2, 5, 3)), requires_grad=True)
    r = _proj(rng, (2, 5, 3))

    def f(q, k, v):
        a = F.softmax(F.mul(F.matmul(q, F.transpose(k, (0, 2, 1))), 0.5))
        return F.sum(F.mul(F.matmul(a, v), r))

    return f, [q, k, v]


def _case_broadcast(rng):
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4,)), requires_grad=True)
    r = _proj(rng, (3, 4))
    return (lambda a, b: F.sum(F.mul(F.sub(F.mul(F.add(a, b), b), a), r))), [a, b]


def _case_take(rng):
    x = Tensor(rng.standard_normal((3, 7)), requires_grad=True)
    idx = rng.integers(0, 7, size=(4, 4))
    r = _proj(rng, (3, 4, 4))
    return (lambda x: F.sum(F.mul(F.take(x, idx, axis=1), r))), [x]


def _case_concat(rng):
    a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 5)), requires_grad=True)
    r = _proj(rng, (2, 8))
    return (lambda a, b: F.sum(F.mul(F.concat([a, b], axis=1), r))), [a, b]


def _case_edt_nano(rng):
    from ..model import build_model, preset
    from ..model.config import TaskSpec

    cfg = preset("edt-nano", tasks=[TaskSpec("sr", 2)])
    model = build_model(cfg, seed=int(rng.integers(1 << 31)))
    x = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)))
    y = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)))
    params = model.parameters()
    # the init is tiny (std 0.02), which leaves some gradients near 1e-6 where
    # central differences are roundoff-limited; check at a generic point instead
    for p in params:
        p.data = rng.standard_normal(p.shape) * 0.3
    task = cfg.tasks[0].id
    return (lambda *ps: F.l1_loss(model.forward(task, x), y)), params


def _away_from_zero(rng, shape):
    return rng.uniform(0.2, 2.0, shape) * rng.choice([-1.0, 1.0], shape)


GRAD_CASES: dict[str, GradCase] = {
    c.name: c
    for c in [
        GradCase("matmul", _case_matmul),
        GradCase("matmul_batched", _case_bmm),
        GradCase("conv2d", _conv_case(1, 1, 1)),
        GradCase("conv2d_strided", _conv_case(2, 1, 1)),
        GradCase("conv2d_depthwise", _conv_case(1, 2, 4, cin=4, cout=4, k=5)),
        GradCase("conv2d_transposed", _case_convT),
        GradCase("layernorm", _case_layernorm),
        GradCase("softmax", _unary(F.softmax, (3, 5))),
        GradCase("gelu", _unary(F.gelu, (4, 5))),
        GradCase("pixel_shuffle", _unary(lambda x: F.pixel_shuffle(x, 2), (1, 8, 2, 3))),
        GradCase("pixel_unshuffle", _unary(lambda x: F.pixel_unshuffle(x, 2), (1, 2, 4, 6))),
        GradCase("roll", _unary(lambda x: F.roll(x, (1, -2), (1, 2)), (2, 4, 5))),
        GradCase("pad_reflect", _unary(lambda x: F.pad_reflect(x, (1, 2), (2, 0)), (1, 2, 4, 5))),
        GradCase("transpose", _unary(lambda x: F.transpose(F.reshape(x, (2, 3, 4)), (2, 0, 1)), (6, 4))),
        GradCase("getitem", _unary(lambda x: x[:, 1:3, ::2], (2, 4, 5))),
        GradCase("sum", _unary(lambda x: F.sum(x, axis=1, keepdims=True), (3, 4))),
        GradCase("mean", _unary(lambda x: F.mean(x, axis=0), (3, 4))),
        GradCase("abs", _unary(F.abs, (3, 4), sample=_away_from_zero)),
        GradCase("broadcast_arith", _case_broadcast),
        GradCase("take", _case_take),
        GradCase("concat", _case_concat),
        GradCase("l1_loss", _case_l1),
        GradCase("attention", _case_attention),
        GradCase("edt-nano", _case_edt_nano, max_coords=12),
    ]
}


def run_grad_cases(names: Sequence[str] | None = None, seed: int = 0) -> list[tuple[str, float]]:
    """Run registered cases and return ``(name, max_rel_error)`` pairs."""
    selected = list(GRAD_CASES) if names is None else list(names)
    results = []
    for name in selected:
        case = GRAD_CASES[name]
        f, xs = case.build(np.random.default_rng(seed))
        results.append((name, finite_diff_check(f, xs, case.step, case.max_coords, seed)))
    return results
