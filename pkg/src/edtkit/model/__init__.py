"""EDT architecture: crossed local attention body with task-specific conv heads."""

from .accounting import count_macs, count_params, layer_table, summarize
from .attention import (
    AttentionRecord,
    CrossedLocalAttention,
    WindowLayout,
    attention_macs,
    shifted_window_mask,
    window_partition,
)
from .blocks import AntiFFN, Body, Stage, TransformerBlock
from .config import PRESETS, ConfigError, ModelConfig, TaskSpec, WindowSpec, load_config, parse_task, preset
from .edt import ActivationTrace, EdtModel, build_model
from .nn import LayerRow, Module

__all__ = [
    "ActivationTrace",
    "AntiFFN",
    "AttentionRecord",
    "Body",
    "ConfigError",
    "CrossedLocalAttention",
    "EdtModel",
    "LayerRow",
    "ModelConfig",
    "Module",
    "PRESETS",
    "Stage",
    "TaskSpec",
    "TransformerBlock",
    "WindowLayout",
    "WindowSpec",
    "attention_macs",
    "build_model",
    "count_macs",
    "count_params",
    "layer_table",
    "load_config",
    "parse_task",
    "preset",
    "shifted_window_mask",
    "summarize",
    "window_partition",
]
