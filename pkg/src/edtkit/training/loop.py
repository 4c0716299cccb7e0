"""Pre-training, fine-tuning, checkpoints and evaluation."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..autodiff import Graph, Tensor, load_arrays, no_grad, save_arrays
from ..autodiff import functional as F
from ..data import derive_seed, load_dataset, sample_patches, synthetic_image
from ..model import EdtModel, ModelConfig, TaskSpec, build_model, parse_task
from ..model.config import ConfigError
from .metrics import psnr, psnr_y
from .optim import Adam, TrainConfig, lr_at

__all__ = [
    "Checkpoint",
    "synthetic_pool",
    "pretrain",
    "finetune",
    "task_gradients",
    "batch_loss",
    "evaluate",
    "JsonlLogger",
]


@dataclass
class Checkpoint:
    """Parameters, Adam moments, iteration counter and a config digest."""

    model_config: ModelConfig
    train_config: TrainConfig
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    iteration: int = 0
    config_hash: str = ""

    def build(self) -> EdtModel:
        model = build_model(self.model_config, seed=self.train_config.seed)
        model.load_state_dict(self.params)
        return model

    def save(self, path: str | Path) -> None:
        arrays = {f"param/{n}": a for n, a in self.params.items()}
        arrays.update({f"adam_m/{n}": a for n, a in self.m.items()})
        arrays.update({f"adam_v/{n}": a for n, a in self.v.items()})
        meta = {
            "iteration": self.iteration,
            "adam_t": self.adam_t,
            "config_hash": self.config_hash,
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config.to_dict(),
        }
        save_arrays(path, arrays, kind="checkpoint", meta=meta)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        arrays, meta, _ = load_arrays(path, kind="checkpoint")
        sections: dict[str, dict] = {"param": {}, "adam_m": {}, "adam_v": {}}
        for key, a in arrays.items():
            sec, name = key.split("/", 1)
            sections[sec][name] = a
        return cls(
            model_config=ModelConfig.from_dict(meta["model_config"]),
            train_config=TrainConfig.from_dict(meta["train_config"]),
            params=sections["param"],
            m=sections["adam_m"],
            v=sections["adam_v"],
            adam_t=int(meta["adam_t"]),
            iteration=int(meta["iteration"]),
            config_hash=meta["config_hash"],
        )


class JsonlLogger:
    """Appends ``{iter, task, loss, lr, wallclock}`` records to a file."""

    def __init__(self, path: str | Path | None = None, wallclock: bool = True):
        self.path = Path(path) if path else None
        self.wallclock = wallclock
        self.records: list[dict] = []
        self._t0 = time.perf_counter()
        if self.path:
            self.path.write_text("")

    def __call__(self, iteration: int, task: str, loss: float, lr: float) -> None:
        rec = {
            "iter": iteration,
            "task": task,
            "loss": loss,
            "lr": lr,
            "wallclock": round(time.perf_counter() - self._t0, 6) if self.wallclock else 0.0,
        }
        self.records.append(rec)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")


def synthetic_pool(count: int, size: int, seed: int) -> list[np.ndarray]:
    return [synthetic_image((size, size), derive_seed(seed, 10_000 + i)) for i in range(count)]


def _pool(data, tasks, cfg: TrainConfig):
    if data is None:
        need = max(cfg.patch_for(t) * t.scale for t in tasks)
        return synthetic_pool(16, max(64, need + need // 2), cfg.seed)
    if isinstance(data, (str, Path)):
        return load_dataset(data)
    return list(data)


def _batch(pool, task: TaskSpec, cfg: TrainConfig, iteration: int, k: int):
    b = sample_patches(pool, task, cfg.patch_for(task), cfg.batch, seed=derive_seed(cfg.seed, iteration, k))
    return Tensor(b.degraded), Tensor(b.clean)


def batch_loss(model: EdtModel, task: str, x, y) -> Tensor:
    return F.l1_loss(model.forward(task, x), y)


def task_gradients(model: EdtModel, batches: dict[str, tuple]) -> dict[str, dict[str, np.ndarray]]:
    """Separate ``d loss_task / d param`` for each ``task -> (x, y)`` batch."""
    named = dict(model.named_parameters())
    out = {}
    for task, (x, y) in batches.items():
        with Graph() as g:
            loss = batch_loss(model, task, x, y)
        grads = g.backward(loss, wrt=list(named.values()))
        out[task] = {n: grads[p] for n, p in named.items()}
    return out


def _run(model, tasks, cfg, pool, optimizer, start, stop, lr_fn, log):
    named = dict(model.named_parameters())
    plist = list(named.values())
    names = list(named)
    for it in range(start, stop):
        lr = lr_fn(it)
        with Graph() as g:
            losses = []
            for k, task in enumerate(tasks):
                x, y = _batch(pool, task, cfg, it, k)
                losses.append(batch_loss(model, task.id, x, y))
            total = losses[0]
            for extra in losses[1:]:
                total = F.add(total, extra)
        grads = g.backward(total, wrt=plist)
        optimizer.step({n: grads[p] for n, p in zip(names, plist)}, lr)
        if log is not None and (it % cfg.log_interval == 0 or it == stop - 1):
            for task, loss in zip(tasks, losses):
                log(it, task.id, loss.item(), lr)


def _checkpoint(model, mcfg, tcfg, optimizer, iteration) -> Checkpoint:
    return Checkpoint(
        model_config=mcfg,
        train_config=tcfg,
        params={n: p.data.copy() for n, p in model.named_parameters()},
        m={n: a.copy() for n, a in optimizer.m.items()},
        v={n: a.copy() for n, a in optimizer.v.items()},
        adam_t=optimizer.t,
        iteration=iteration,
        config_hash=tcfg.digest(mcfg),
    )


def pretrain(
    model_config: ModelConfig,
    train_config: TrainConfig,
    data=None,
    log: Callable | None = None,
    resume: Checkpoint | None = None,
) -> Checkpoint:
    """Joint training of every task's encoder/decoder and the shared body.

    Each iteration draws one batch per task, sums the per-task L1 losses and
    takes one Adam step. Batches depend only on ``(seed, iteration, task
    index)``, so resuming from a checkpoint reproduces an uninterrupted run.
    """
    # training tasks override the model's; an empty list trains the model's own
    tasks = train_config.check_tasks(train_config.tasks or model_config.tasks)
    if [t.id for t in tasks] != model_config.task_ids:
        model_config = model_config.with_tasks(tasks)
    train_config = train_config.with_(tasks=tasks)
    model = build_model(model_config, seed=train_config.seed)
    optimizer = Adam(dict(model.named_parameters()), train_config.beta1, train_config.beta2, train_config.eps)
    start = 0
    if resume is not None:
        if resume.config_hash != train_config.digest(model_config):
            raise ConfigError("checkpoint was produced by a different configuration")
        model.load_state_dict(resume.params)
        optimizer.m = {n: a.copy() for n, a in resume.m.items()}
        optimizer.v = {n: a.copy() for n, a in resume.v.items()}
        optimizer.t = resume.adam_t
        start = resume.iteration
    pool = _pool(data, tasks, train_config)
    _run(model, tasks, train_config, pool, optimizer, start, train_config.iterations,
         lambda it: lr_at(it, train_config), log)
    return _checkpoint(model, model_config, train_config, optimizer, max(start, train_config.iterations))


def finetune(
    checkpoint: Checkpoint,
    task: TaskSpec | str,
    train_config: TrainConfig,
    data=None,
    log: Callable | None = None,
    allow_new_task: bool = False,
) -> Checkpoint:
    """Train one task from a pre-trained body (and head/tail) at a constant small lr.

    The returned checkpoint holds only the body plus the target task. A task
    without a pre-trained encoder/decoder raises unless ``allow_new_task``.
    """
    task = parse_task(task)
    src = checkpoint.model_config
    if task.id not in src.task_ids and not allow_new_task:
        raise KeyError(f"checkpoint has no encoder/decoder for {task.id} (have {src.task_ids})")
    mcfg = src.with_tasks([task])
    tcfg = train_config.with_(regime="single", tasks=(task,))
    model = build_model(mcfg, seed=tcfg.seed)
    keep = ("body.", f"encoders.{task.id}.", f"decoders.{task.id}.")
    subset = {n: a for n, a in checkpoint.params.items() if n.startswith(keep)}
    missing = model.load_state_dict(subset, strict=False)
    if missing and not allow_new_task:
        raise KeyError(f"checkpoint lacks parameters: {missing[:5]}")
    optimizer = Adam(dict(model.named_parameters()), tcfg.beta1, tcfg.beta2, tcfg.eps)
    pool = _pool(data, [task], tcfg)
    _run(model, [task], tcfg, pool, optimizer, 0, tcfg.iterations, lambda it: tcfg.finetune_lr, log)
    return _checkpoint(model, mcfg, tcfg, optimizer, tcfg.iterations)


def evaluate(model: EdtModel, task: TaskSpec | str, pairs, border: int = 0) -> dict:
    """PSNR (RGB and Y) per image and their means.

    ``pairs`` yields ``(name, degraded, clean)`` or ``(degraded, clean)``.
    """
    task = parse_task(task)
    rows = []
    with no_grad():
        for i, item in enumerate(pairs):
            name, deg, clean = item if len(item) == 3 else (str(i), *item)
            out = model.forward(task.id, Tensor(np.asarray(deg, dtype=np.float64)[None])).data[0]
            out = np.clip(out, 0.0, 1.0)
            clean = np.asarray(clean, dtype=np.float64)
            if out.shape != clean.shape:
                raise ValueError(f"{name}: output {out.shape} does not match target {clean.shape}")
            rows.append({"name": name, "psnr": psnr(out, clean, border), "psnr_y": psnr_y(out, clean, border)})
    if not rows:
        raise ValueError("no evaluation pairs")
    return {
        "task": task.id,
        "images": rows,
        "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
        "mean_psnr_y": float(np.mean([r["psnr_y"] for r in rows])),
    }
