"""Analytic parameter and multiply-accumulate accounting.

Convolutions cost ``O * C/g * kh * kw`` MACs per output cell, linears
``in * out`` per position and each crossed attention module
``4HWC^2 + 2hwHWC``. Transposed convolutions are charged per input cell
(``Ci * O * kh * kw``), which is the work actually performed. Norms,
activations and bias tables are free.
"""

from __future__ import annotations

from .attention import attention_macs
from .edt import EdtModel
from .nn import LayerRow

__all__ = ["count_params", "count_macs", "layer_table", "summarize", "attention_macs"]


def _hw(input_shape) -> tuple[int, int]:
    shape = tuple(int(v) for v in input_shape)
    if len(shape) < 2:
        raise ValueError(f"input shape needs at least (H, W), got {input_shape}")
    return shape[-2], shape[-1]


def count_params(model: EdtModel, task: str | None = None) -> int:
    """Trainable scalars; restricted to one task's encoder, decoder and the body if given."""
    if task is None:
        return model.num_params()
    t = model._task(task).id
    return model.encoders[t].num_params() + model.body.num_params() + model.decoders[t].num_params()


def layer_table(model: EdtModel, input_shape, task: str | None = None) -> list[LayerRow]:
    task = model.config.tasks[0].id if task is None else task
    return model.task_rows(task, _hw(input_shape))


def count_macs(model: EdtModel, input_shape, task: str | None = None) -> int:
    return sum(r.macs for r in layer_table(model, input_shape, task))


def summarize(model: EdtModel, input_shape, task: str | None = None) -> dict:
    """Per-module and total counts, as printed by the ``info`` command."""
    rows = layer_table(model, input_shape, task)
    groups: dict[str, dict[str, int]] = {}
    for r in rows:
        key = r.name.split(".")[0]
        g = groups.setdefault(key, {"params": 0, "macs": 0})
        g["params"] += r.params
        g["macs"] += r.macs
    return {
        "variant": model.config.variant,
        "task": task or model.config.tasks[0].id,
        "input": list(_hw(input_shape)),
        "params": sum(r.params for r in rows),
        "macs": sum(r.macs for r in rows),
        "model_params": model.num_params(),
        "modules": groups,
        "layers": [r.__dict__ for r in rows],
    }
