"""Representation diagnostics: CKA layer similarity and attention distance."""

from .attention_distance import (
    AttentionProfile,
    DistanceRow,
    ShiftedWindowError,
    attention_distance,
    attention_profile,
    window_distances,
)
from .cka import (
    ActivationMatrix,
    CkaMap,
    MinibatchCKA,
    UndefinedSimilarityError,
    centering_matrix,
    cka,
    cka_map,
    gram,
    hsic,
    hsic_unbiased,
    minibatch_cka,
    minibatch_cka_map,
    similarity_ratio,
)
from .export import load_trace, read_map_csv, render_svg, save_trace, write_map_csv, write_map_svg, write_ratios_csv

__all__ = [
    "ActivationMatrix",
    "AttentionProfile",
    "CkaMap",
    "DistanceRow",
    "MinibatchCKA",
    "ShiftedWindowError",
    "UndefinedSimilarityError",
    "attention_distance",
    "attention_profile",
    "centering_matrix",
    "cka",
    "cka_map",
    "gram",
    "hsic",
    "hsic_unbiased",
    "load_trace",
    "minibatch_cka",
    "minibatch_cka_map",
    "read_map_csv",
    "render_svg",
    "save_trace",
    "similarity_ratio",
    "window_distances",
    "write_map_csv",
    "write_map_svg",
    "write_ratios_csv",
]
