"""Parameter and MAC counts of the four presets on a 192x192 denoising input.

Counting is analytic, so even edt-l is reported without a forward pass.

    python3 demos/cost_table.py
"""

from edtkit.model import build_model, preset, summarize

print(f"{'variant':<8} {'params':>9} {'GMACs':>8}  largest module")
for name in ("edt-t", "edt-s", "edt-b", "edt-l"):
    model = build_model(preset(name, ["denoise:15"]), seed=0)
    rep = summarize(model, (192, 192))
    top = max(rep["modules"].items(), key=lambda kv: kv[1]["macs"])
    print(f"{name:<8} {rep['params'] / 1e6:8.2f}M {rep['macs'] / 1e9:8.1f}  {top[0]} ({top[1]['macs'] / rep['macs']:.0%})")
