"""Architecture hyperparameters, task descriptors and presets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

__all__ = [
    "WindowSpec",
    "TaskSpec",
    "ModelConfig",
    "ConfigError",
    "PRESETS",
    "preset",
    "load_config",
    "parse_task",
]


class ConfigError(ValueError):
    """Invalid model or task configuration."""


@dataclass(frozen=True)
class WindowSpec:
    """Horizontal window is ``h x w`` cells, the vertical one ``w x h``."""

    h: int = 6
    w: int = 24

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ConfigError(f"window extents must be >= 1, got ({self.h}, {self.w})")

    def size(self, branch: str) -> tuple[int, int]:
        return (self.h, self.w) if branch == "h" else (self.w, self.h)

    def shift(self, branch: str) -> tuple[int, int]:
        a, b = self.size(branch)
        return (a // 2, b // 2)

    @property
    def tile(self) -> int:
        """Smallest extent divisible by both window orientations."""
        return math.lcm(self.h, self.w)


TASK_PARAMETERS = {"sr": (2, 3, 4), "denoise": (15, 25, 50), "derain": ("light", "heavy")}


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    parameter: int | str

    def __post_init__(self):
        if self.kind not in TASK_PARAMETERS:
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.parameter not in TASK_PARAMETERS[self.kind]:
            raise ConfigError(f"{self.kind} parameter must be one of {TASK_PARAMETERS[self.kind]}, got {self.parameter!r}")

    @property
    def id(self) -> str:
        if self.kind == "sr":
            return f"sr_x{self.parameter}"
        if self.kind == "denoise":
            return f"denoise_g{self.parameter}"
        return f"derain_{self.parameter}"

    @property
    def high_res(self) -> bool:
        """Denoising and deraining run the 1/4-downsampling path."""
        return self.kind != "sr"

    @property
    def scale(self) -> int:
        return int(self.parameter) if self.kind == "sr" else 1

    def __str__(self) -> str:
        return f"{self.kind}:{self.parameter}"


def parse_task(text) -> TaskSpec:
    """Accept ``TaskSpec``, ``{"kind", "parameter"}``, ``"sr:2"`` or ids like ``"sr_x2"``."""
    if isinstance(text, TaskSpec):
        return text
    if isinstance(text, dict):
        kind, param = text["kind"], text["parameter"]
    else:
        s = str(text).strip().lower()
        if ":" in s:
            kind, param = s.split(":", 1)
        elif s.startswith("sr_x"):
            kind, param = "sr", s[4:]
        elif s.startswith("denoise_g"):
            kind, param = "denoise", s[9:]
        elif s.startswith("derain_"):
            kind, param = "derain", s[7:]
        elif s in TASK_PARAMETERS:
            kind, param = s, {"sr": 2, "denoise": 15, "derain": "light"}[s]
        else:
            raise ConfigError(f"cannot parse task {text!r}")
    if kind != "derain":
        try:
            param = int(param)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad task parameter {param!r}") from exc
    return TaskSpec(kind, param)


@dataclass(frozen=True)
class ModelConfig:
    channels: int
    stages: int
    heads: int
    blocks_per_stage: int = 6
    ffn_expansion: int = 2
    window: WindowSpec = field(default_factory=WindowSpec)
    tasks: tuple[TaskSpec, ...] = (TaskSpec("denoise", 15),)
    variant: str = "custom"
    rel_pos_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(parse_task(t) for t in self.tasks))
        C = self.channels
        if C < 2 or C % 2:
            raise ConfigError(f"channels must be even, got {C}")
        if self.heads < 1 or (C // 2) % self.heads:
            raise ConfigError(f"heads={self.heads} must divide channels/2={C // 2}")
        if self.stages < 0 or self.blocks_per_stage < 0:
            raise ConfigError("stages and blocks_per_stage must be non-negative")
        if self.ffn_expansion < 1:
            raise ConfigError("ffn_expansion must be >= 1")
        if not self.tasks:
            raise ConfigError("at least one task is required")
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate tasks in {ids}")

    @property
    def task_ids(self) -> list[str]:
        return [t.id for t in self.tasks]

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(f"task {task_id!r} is not registered (have {self.task_ids})")

    def with_tasks(self, tasks) -> "ModelConfig":
        return replace(self, tasks=tuple(parse_task(t) for t in tasks))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window_h"], d["window_w"] = self.window.h, self.window.w
        del d["window"]
        d["tasks"] = [str(t) for t in self.tasks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        name = d.pop("preset", None) or d.get("variant")
        base = PRESETS.get(str(name).lower()) if name else None
        kw = asdict(base) if base else {}
        if base:
            kw["window"] = base.window
        win = kw.get("window", WindowSpec())
        wh, ww = d.pop("window_h", win.h), d.pop("window_w", win.w)
        if "window" in d:
            w = d.pop("window")
            wh, ww = (w["h"], w["w"]) if isinstance(w, dict) else tuple(w)
        kw["window"] = WindowSpec(int(wh), int(ww))
        known = {"channels", "stages", "heads", "blocks_per_stage", "ffn_expansion", "tasks", "variant", "rel_pos_bias"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw.update(d)
        if "tasks" in kw:
            kw["tasks"] = tuple(parse_task(t) for t in kw["tasks"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


PRESETS: dict[str, ModelConfig] = {
    "edt-t": ModelConfig(channels=60, stages=4, heads=6, variant="edt-t"),
    "edt-s": ModelConfig(channels=120, stages=5, heads=6, variant="edt-s"),
    "edt-b": ModelConfig(channels=180, stages=6, heads=6, variant="edt-b"),
    "edt-l": ModelConfig(channels=240, stages=12, heads=8, variant="edt-l"),
    # desk-scale toy model for training runs and end-to-end gradient checks
    "edt-nano": ModelConfig(
        channels=8,
        stages=1,
        heads=2,
        blocks_per_stage=2,
        window=WindowSpec(2, 4),
        tasks=(TaskSpec("sr", 2),),
        variant="edt-nano",
    ),
}


def preset(name: str, tasks=None) -> ModelConfig:
    try:
        cfg = PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return cfg.with_tasks(tasks) if tasks is not None else cfg


def load_config(path: str | Path) -> ModelConfig:
    """Read a YAML or JSON model config file."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return ModelConfig.from_dict(data)
