"""Degradation synthesis, image I/O and patch sampling."""

from .degrade import (
    RAIN_PRESETS,
    RainSpec,
    add_gaussian_noise,
    degrade,
    derive_seed,
    philox,
    rain_layer,
    synth_rain,
    worker_seed,
)
from .images import (
    PatchBatch,
    dihedral,
    list_images,
    load_dataset,
    load_paired,
    load_png,
    read_manifest,
    sample_patches,
    save_png,
    synthetic_image,
    write_manifest,
    write_synthetic_dataset,
)
from .resize import bicubic_resize, cubic, resize_weights

__all__ = [
    "PatchBatch",
    "RAIN_PRESETS",
    "RainSpec",
    "add_gaussian_noise",
    "bicubic_resize",
    "cubic",
    "degrade",
    "derive_seed",
    "dihedral",
    "list_images",
    "load_dataset",
    "load_paired",
    "load_png",
    "philox",
    "rain_layer",
    "read_manifest",
    "resize_weights",
    "sample_patches",
    "save_png",
    "synth_rain",
    "synthetic_image",
    "worker_seed",
    "write_manifest",
    "write_synthetic_dataset",
]
