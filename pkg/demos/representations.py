"""Layer-similarity map and attention distances of a randomly initialised edt-nano.

Writes cka.svg to the working directory, prints the map and, per layer, the
fraction of layers it resembles above a 0.95 CKA threshold. Residual paths
keep every layer close to the input at initialisation, so even the loosest
pair stays high.

    python3 demos/representations.py
"""

import numpy as np

from edtkit.autodiff import Tensor, no_grad
from edtkit.data import synthetic_image
from edtkit.diagnostics import attention_profile, cka_map, similarity_ratio, write_map_svg
from edtkit.model import build_model, preset

model = build_model(preset("edt-nano", ["denoise:15"]), seed=0)
x = np.stack([synthetic_image((16, 16), s) for s in range(12)])
with no_grad():
    _, trace = model.forward("denoise_g15", Tensor(x), capture=True)

cmap = cka_map(trace)
write_map_svg("cka.svg", cmap, cell=16)
ratios = similarity_ratio(cmap, 0.95)
for label, row, r in zip(cmap.labels_a, cmap.values, ratios):
    print(f"{label:<20} {' '.join(f'{v:.2f}' for v in row)}   {r:.2f}")

print()
for row in attention_profile(trace.attention):
    if row.excluded:
        print(f"block {row.block} {row.branch} head {row.head}: shifted, not recorded")
    else:
        print(f"block {row.block} {row.branch} head {row.head}: distance {row.mean:.3f} +- {row.std:.3f}")
