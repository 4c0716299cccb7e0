"""Pre-train edt-nano on x2 and x3 super-resolution, then fine-tune on x2.

Everything runs on procedurally generated images, so the PSNR values only
show that the loop moves in the right direction.

    python3 demos/pretrain_finetune.py
"""

from edtkit.data import bicubic_resize, synthetic_image
from edtkit.model import preset
from edtkit.training import TrainConfig, evaluate, finetune, pretrain

cfg = TrainConfig(regime="multi_related", tasks=("sr:2", "sr:3"), batch=4, patch=8, iterations=60, seed=0)
losses = {}
ck = pretrain(preset("edt-nano"), cfg, log=lambda it, task, loss, lr: losses.setdefault(task, []).append(loss))
for task, seq in losses.items():
    print(f"pre-train {task}: loss {seq[0]:.4f} -> {seq[-1]:.4f}")

held_out = []
for seed in range(100, 104):
    clean = synthetic_image((32, 32), seed)
    held_out.append((f"img{seed}", bicubic_resize(clean, 0.5), clean))

before = evaluate(ck.build(), "sr:2", held_out)["mean_psnr"]
tuned = finetune(ck, "sr:2", cfg.with_(iterations=40, finetune_lr=1e-3))
after = evaluate(tuned.build(), "sr:2", held_out)["mean_psnr"]
print(f"held-out x2 PSNR: {before:.2f} dB after pre-training, {after:.2f} dB after fine-tuning")
