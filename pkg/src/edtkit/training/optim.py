"""Adam, the milestone learning-rate schedule and training configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..autodiff import NonFiniteError
from ..model.config import ConfigError, TaskSpec, parse_task

__all__ = ["REGIMES", "TrainConfig", "lr_at", "adam_step", "Adam"]

REGIMES = ("single", "multi_unrelated", "multi_related")
MILESTONES = (250_000, 400_000, 450_000, 475_000)


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "single"
    tasks: tuple[TaskSpec, ...] = ()
    batch: int = 32
    iterations: int = 500_000
    milestones: tuple[int, ...] = MILESTONES
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    # degraded-input patch side; None picks 48 for SR and 192 otherwise
    patch: int | None = None
    log_interval: int = 1
    finetune_lr: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(parse_task(t) for t in self.tasks))
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.batch < 1 or self.iterations < 0:
            raise ConfigError("batch must be >= 1 and iterations >= 0")
        if self.log_interval < 1:
            raise ConfigError("log_interval must be >= 1")
        if list(self.milestones) != sorted(self.milestones):
            raise ConfigError("milestones must be increasing")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0 and self.lr >= 0):
            raise ConfigError("invalid optimizer hyperparameters")

    def check_tasks(self, tasks=None) -> tuple[TaskSpec, ...]:
        """Validate the task list against the regime."""
        ts = tuple(parse_task(t) for t in (tasks if tasks is not None else self.tasks))
        if not ts:
            raise ConfigError("no training tasks given")
        if len({t.id for t in ts}) != len(ts):
            raise ConfigError("training tasks must be distinct")
        kinds = {t.kind for t in ts}
        if self.regime == "single" and len(ts) != 1:
            raise ConfigError(f"single-task regime takes exactly one task, got {len(ts)}")
        if self.regime != "single" and len(ts) < 2:
            raise ConfigError(f"{self.regime} needs at least two tasks")
        if self.regime == "multi_related" and len(kinds) != 1:
            raise ConfigError("multi_related tasks must share one kind (e.g. sr x2/x3/x4)")
        if self.regime == "multi_unrelated" and len(kinds) != len(ts):
            raise ConfigError("multi_unrelated tasks must all be of different kinds")
        return ts

    def patch_for(self, task: TaskSpec) -> int:
        if self.patch is not None:
            return self.patch
        return 48 if task.kind == "sr" else 192

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = [str(t) for t in self.tasks]
        d["milestones"] = list(self.milestones)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self, model_config=None) -> str:
        """Hash of everything that shapes the trajectory except its length."""
        d = self.to_dict()
        d.pop("iterations")
        d.pop("log_interval")
        payload = {"train": d, "model": model_config.to_dict() if model_config is not None else None}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def lr_at(iteration: int, config: TrainConfig | None = None, base: float | None = None, milestones=None) -> float:
    """``base * 2**-k`` with ``k`` the number of milestones already reached."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    cfg = config or TrainConfig()
    base = cfg.lr if base is None else base
    ms = cfg.milestones if milestones is None else milestones
    k = sum(1 for m in ms if iteration >= m)
    return base * 0.5**k


def adam_step(param, grad, m, v, lr: float, beta1: float, beta2: float, eps: float, t: int):
    """One bias-corrected Adam update; returns new ``(param, m, v)``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient")
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


@dataclass
class Adam:
    """Adam over a name -> Tensor mapping. Parameters are rebound, not mutated."""

    params: dict
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        for n, p in self.params.items():
            self.m.setdefault(n, np.zeros(p.shape))
            self.v.setdefault(n, np.zeros(p.shape))

    def step(self, grads: dict, lr: float) -> None:
        """``grads`` maps parameter names to arrays; missing names get zero gradient."""
        for n, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {n}")
        self.t += 1
        for n, p in self.params.items():
            g = grads.get(n)
            if g is None:
                g = np.zeros(p.shape)
            p.data, self.m[n], self.v[n] = adam_step(
                p.data, g, self.m[n], self.v[n], lr, self.beta1, self.beta2, self.eps, self.t
            )
