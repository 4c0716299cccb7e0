"""Activation dumps, CKA map CSV and SVG heatmaps."""

from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..autodiff.serialization import load_arrays, save_arrays
from .cka import CkaMap

__all__ = [
    "VIRIDIS_STOPS",
    "colormap",
    "save_trace",
    "load_trace",
    "write_map_csv",
    "read_map_csv",
    "write_ratios_csv",
    "render_svg",
    "write_map_svg",
]

# anchor colours of the 256-step palette, linearly interpolated in RGB
VIRIDIS_STOPS = ("#440154", "#3b528b", "#21918c", "#5ec962", "#fde725")
_NAN_COLOUR = "#bdbdbd"


def _hex(c: str) -> np.ndarray:
    return np.array([int(c[i : i + 2], 16) for i in (1, 3, 5)], dtype=np.float64)


def colormap(steps: int = 256) -> list[str]:
    stops = np.stack([_hex(c) for c in VIRIDIS_STOPS])
    t = np.linspace(0.0, 1.0, steps) * (len(stops) - 1)
    lo = np.minimum(t.astype(int), len(stops) - 2)
    frac = (t - lo)[:, None]
    rgb = np.rint(stops[lo] * (1 - frac) + stops[lo + 1] * frac).astype(int)
    return [f"#{r:02x}{g:02x}{b:02x}" for r, g, b in rgb]


_PALETTE = colormap()


def save_trace(path: str | Path, trace, model: str = "") -> None:
    """Write each layer as an ``(m, p)`` matrix; the manifest carries label, m, p."""
    arrays = {}
    extra = {}
    for label, a in zip(trace.labels, trace.arrays):
        mat = np.asarray(a, dtype=np.float64).reshape(a.shape[0], -1)
        arrays[label] = mat
        extra[label] = {"m": mat.shape[0], "p": mat.shape[1]}
    meta = {"task": getattr(trace, "task", ""), "model": model}
    save_arrays(path, arrays, kind="activations", meta=meta, extra=extra)


def load_trace(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``({label: (m, p) matrix}, meta)`` in depth order."""
    arrays, meta, _ = load_arrays(path, kind="activations")
    return arrays, meta


def write_map_csv(path: str | Path, cmap: CkaMap) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["layer"] + list(cmap.labels_b))
        for label, row in zip(cmap.labels_a, cmap.values):
            wr.writerow([label] + ["nan" if np.isnan(v) else f"{v:.12g}" for v in row])


def read_map_csv(path: str | Path) -> CkaMap:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    labels_b = rows[0][1:]
    labels_a = [r[0] for r in rows[1:]]
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64).reshape(len(labels_a), len(labels_b))
    return CkaMap(vals, labels_a, labels_b)


def write_ratios_csv(path: str | Path, labels: list[str], ratios: np.ndarray, threshold: float) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["layer", "index", f"ratio_gt_{threshold:g}"])
        for i, (label, r) in enumerate(zip(labels, ratios)):
            wr.writerow([label, i, f"{r:.12g}"])


def render_svg(cmap: CkaMap, cell: int = 8) -> str:
    """Heatmap with rows top to bottom and columns left to right in depth order.

    The canvas is ``L_b * cell`` wide and ``L_a * cell`` tall. Values are
    clipped to [0, 1]; undefined entries are drawn grey.
    """
    La, Lb = cmap.values.shape
    W, H = Lb * cell, La * cell
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" shape-rendering="crispEdges">',
        f"<title>{escape(cmap.estimator)} CKA map {La}x{Lb}</title>",
    ]
    for i in range(La):
        for j in range(Lb):
            v = cmap.values[i, j]
            if np.isnan(v):
                colour = _NAN_COLOUR
            else:
                colour = _PALETTE[int(round(min(max(v, 0.0), 1.0) * (len(_PALETTE) - 1)))]
            tip = f"{cmap.labels_a[i]} / {cmap.labels_b[j]}: {v:.4f}"
            out.append(
                f'<rect x="{j * cell}" y="{i * cell}" width="{cell}" height="{cell}" fill="{colour}">'
                f"<title>{escape(tip)}</title></rect>"
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_map_svg(path: str | Path, cmap: CkaMap, cell: int = 8) -> None:
    Path(path).write_text(render_svg(cmap, cell))
