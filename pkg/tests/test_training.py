import json

import numpy as np
import pytest

from edtkit.autodiff import Graph, NonFiniteError, Tensor, no_grad
from edtkit.data import sample_patches
from edtkit.model import PRESETS, ConfigError, build_model
from edtkit.training import (
    PSNR_CAP,
    Adam,
    Checkpoint,
    JsonlLogger,
    TrainConfig,
    adam_step,
    batch_loss,
    evaluate,
    finetune,
    lr_at,
    pretrain,
    psnr,
    psnr_y,
    rgb_to_y,
    synthetic_pool,
    task_gradients,
)

NANO = PRESETS["edt-nano"]
TINY = TrainConfig(tasks=("sr:2",), batch=2, patch=8, iterations=4, seed=0)


# -- optimizer ---------------------------------------------------------------------


def test_adam_step_matches_hand_computation():
    p, g = np.array([1.0, -2.0]), np.array([0.5, -0.1])
    m, v = np.zeros(2), np.zeros(2)
    p1, m1, v1 = adam_step(p, g, m, v, lr=0.1, beta1=0.9, beta2=0.99, eps=1e-8, t=1)
    np.testing.assert_allclose(m1, 0.1 * g)
    np.testing.assert_allclose(v1, 0.01 * g * g)
    np.testing.assert_allclose(p1, p - 0.1 * g / (np.abs(g) + 1e-8), rtol=1e-14)
    g2 = np.array([0.2, 0.3])
    p2, m2, v2 = adam_step(p1, g2, m1, v1, 0.1, 0.9, 0.99, 1e-8, t=2)
    mh = (0.9 * m1 + 0.1 * g2) / (1 - 0.81)
    vh = (0.99 * v1 + 0.01 * g2 * g2) / (1 - 0.99**2)
    np.testing.assert_allclose(p2, p1 - 0.1 * mh / (np.sqrt(vh) + 1e-8), rtol=1e-14)
    with pytest.raises(ValueError):
        adam_step(p, g, m, v, 0.1, 0.9, 0.99, 1e-8, t=0)


def test_adam_minimizes_quadratic_bowl():
    target = np.array([3.0, -1.0, 0.5])
    x = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam({"x": x})
    # constant-lr Adam hovers at the lr scale, so anneal with the schedule
    for it in range(2000):
        opt.step({"x": 2 * (x.data - target)}, lr=lr_at(it, base=0.05, milestones=(800, 1200, 1500, 1800)))
    np.testing.assert_allclose(x.data, target, atol=1e-3)
    assert opt.t == 2000


def test_adam_rebinds_parameter_arrays():
    x = Tensor(np.ones(2), requires_grad=True)
    before = x.data
    opt = Adam({"x": x, "y": Tensor(np.ones(1), requires_grad=True)})
    opt.step({"x": np.ones(2)}, lr=0.1)
    assert np.array_equal(before, np.ones(2))
    assert not np.array_equal(x.data, before)
    # a name missing from the gradients is treated as zero gradient
    assert np.array_equal(opt.params["y"].data, np.ones(1))


def test_adam_refuses_non_finite_gradient():
    x = Tensor(np.ones(2), requires_grad=True)
    opt = Adam({"x": x})
    with pytest.raises(NonFiniteError):
        opt.step({"x": np.array([1.0, np.inf])}, lr=0.1)
    assert opt.t == 0 and np.array_equal(x.data, np.ones(2))


def test_lr_schedule():
    expected = {0: 2e-4, 249_999: 2e-4, 250_000: 1e-4, 400_000: 5e-5, 450_000: 2.5e-5, 475_000: 1.25e-5, 499_999: 1.25e-5}
    for it, lr in expected.items():
        assert lr_at(it) == lr
    assert lr_at(10, base=1.0, milestones=(5, 10)) == 0.25
    assert lr_at(3, TrainConfig(lr=1e-3, milestones=(2,))) == 5e-4
    with pytest.raises(ValueError):
        lr_at(-1)


# -- configuration ---------------------------------------------------------------


def test_regime_rules():
    assert len(TrainConfig(regime="multi_related").check_tasks(["sr:2", "sr:3", "sr:4"])) == 3
    assert len(TrainConfig(regime="multi_unrelated").check_tasks(["sr:2", "denoise:15", "derain:light"])) == 3
    bad = [
        ("single", ["sr:2", "sr:3"]),
        ("multi_related", ["sr:2"]),
        ("multi_related", ["sr:2", "denoise:15"]),
        ("multi_unrelated", ["sr:2", "sr:3"]),
        ("single", []),
        ("multi_related", ["sr:2", "sr_x2"]),
    ]
    for regime, tasks in bad:
        with pytest.raises(ConfigError):
            TrainConfig(regime=regime).check_tasks(tasks)
    for kw in [{"regime": "joint"}, {"batch": 0}, {"milestones": (3, 1)}, {"beta1": 1.0}, {"log_interval": 0}]:
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


def test_config_digest_and_roundtrip():
    cfg = TrainConfig(tasks=("sr:2",), batch=4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.digest(NANO) == cfg.with_(iterations=7, log_interval=3).digest(NANO)
    assert cfg.digest(NANO) != cfg.with_(lr=1e-3).digest(NANO)
    assert cfg.digest(NANO) != cfg.digest(NANO.with_tasks(["sr:3"]))
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 1})
    assert cfg.patch_for(NANO.tasks[0]) == 48
    assert cfg.patch_for(NANO.with_tasks(["denoise:15"]).tasks[0]) == 192


# -- metrics -----------------------------------------------------------------------


def test_psnr_known_values():
    a = np.zeros((3, 4, 4))
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-12)
    b = a.copy()
    b[:, 0, :] = 1.0
    assert psnr(a, b, border=1) == PSNR_CAP
    assert psnr(a, b) == pytest.approx(10 * np.log10(4), abs=1e-12)
    with pytest.raises(ValueError):
        psnr(a, np.zeros((3, 4, 5)))


def test_luma_conversion():
    white, black = np.ones((3, 2, 2)), np.zeros((3, 2, 2))
    np.testing.assert_allclose(rgb_to_y(white), 235 / 255, rtol=1e-12)
    np.testing.assert_allclose(rgb_to_y(black), 16 / 255, rtol=1e-12)
    red = np.zeros((3, 1, 1))
    red[0] = 1
    assert rgb_to_y(red)[0, 0] == pytest.approx((65.481 + 16) / 255)
    # Y PSNR only sees the luma difference
    x = np.random.default_rng(0).uniform(0, 1, (3, 8, 8))
    mse = np.mean((rgb_to_y(x) - rgb_to_y(0.9 * x)) ** 2)
    assert psnr_y(x, 0.9 * x) == pytest.approx(10 * np.log10(1 / mse), rel=1e-12)
    with pytest.raises(ValueError):
        rgb_to_y(np.zeros((4, 2, 2)))


# -- training ----------------------------------------------------------------------


def nano_batch(task, seed=0, count=2, patch=8):
    pool = synthetic_pool(4, 48, seed)
    b = sample_patches(pool, task, patch, count, seed)
    return Tensor(b.degraded), Tensor(b.clean)


def test_one_small_step_lowers_loss():
    model = build_model(NANO, seed=0)
    x, y = nano_batch("sr:2")
    named = dict(model.named_parameters())
    with Graph() as g:
        loss = batch_loss(model, "sr_x2", x, y)
    grads = g.backward(loss, wrt=list(named.values()))
    Adam(named).step({n: grads[p] for n, p in named.items()}, lr=1e-6)
    with no_grad():
        after = batch_loss(model, "sr_x2", x, y).item()
    assert after < loss.item()


def test_gradient_isolation_between_tasks():
    cfg = NANO.with_tasks(["sr:2", "denoise:15"])
    model = build_model(cfg, seed=0)
    xs, ys = nano_batch("sr:2")
    xd, yd = nano_batch("denoise:15", patch=16)
    grads = task_gradients(model, {"sr_x2": (xs, ys), "denoise_g15": (xd, yd)})
    for src, other in [("sr_x2", "denoise_g15"), ("denoise_g15", "sr_x2")]:
        g = grads[src]
        for n, a in g.items():
            if n.startswith((f"encoders.{other}.", f"decoders.{other}.")):
                assert np.all(a == 0.0), n
        assert any(np.any(a != 0) for n, a in g.items() if n.startswith(f"decoders.{src}."))
        body = [a for n, a in g.items() if n.startswith("body.")]
        assert body and all(np.any(a != 0) for a in body)


def test_pretrain_logs_and_is_deterministic(tmp_path):
    log = JsonlLogger(tmp_path / "log.jsonl", wallclock=False)
    a = pretrain(NANO, TINY, log=log)
    b = pretrain(NANO, TINY)
    assert a.iteration == 4 and a.adam_t == 4
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    recs = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [r["iter"] for r in recs] == [0, 1, 2, 3]
    assert all(r["task"] == "sr_x2" and r["wallclock"] == 0.0 and r["lr"] == 2e-4 for r in recs)


def test_resume_is_bit_identical(tmp_path):
    full = pretrain(NANO, TINY.with_(iterations=6))
    half = pretrain(NANO, TINY.with_(iterations=3))
    path = tmp_path / "ck.edt"
    half.save(path)
    resumed = pretrain(NANO, TINY.with_(iterations=6), resume=Checkpoint.load(path))
    assert resumed.iteration == 6 and resumed.adam_t == 6
    for k in full.params:
        assert np.array_equal(full.params[k], resumed.params[k])
        assert np.array_equal(full.m[k], resumed.m[k]) and np.array_equal(full.v[k], resumed.v[k])
    with pytest.raises(ConfigError):
        pretrain(NANO, TINY.with_(iterations=6, lr=1e-3), resume=half)


def test_checkpoint_roundtrip(tmp_path):
    ck = pretrain(NANO, TINY.with_(iterations=1))
    ck.save(tmp_path / "c.edt")
    back = Checkpoint.load(tmp_path / "c.edt")
    assert back.model_config == ck.model_config and back.train_config == ck.train_config
    assert back.config_hash == ck.config_hash and back.iteration == 1
    assert all(np.array_equal(back.params[k], ck.params[k]) for k in ck.params)
    model = back.build()
    assert all(np.array_equal(p.data, ck.params[n]) for n, p in model.named_parameters())


def test_multi_task_pretrain_logs_every_task():
    cfg = TrainConfig(regime="multi_related", tasks=("sr:2", "sr:3"), batch=1, patch=8, iterations=2)
    recs = []
    ck = pretrain(NANO, cfg, log=lambda it, task, loss, lr: recs.append((it, task)))
    assert recs == [(0, "sr_x2"), (0, "sr_x3"), (1, "sr_x2"), (1, "sr_x3")]
    assert ck.model_config.task_ids == ["sr_x2", "sr_x3"]


def test_finetune_starts_from_pretrained_subset():
    cfg = TrainConfig(regime="multi_related", tasks=("sr:2", "sr:3"), batch=1, patch=8, iterations=2)
    src = pretrain(NANO, cfg)
    ft = finetune(src, "sr:3", TINY.with_(iterations=0))
    assert ft.model_config.task_ids == ["sr_x3"]
    assert set(ft.params) == {k for k in src.params if not k.startswith(("encoders.sr_x2", "decoders.sr_x2"))}
    assert all(np.array_equal(ft.params[k], src.params[k]) for k in ft.params)
    with pytest.raises(KeyError):
        finetune(src, "sr:4", TINY.with_(iterations=0))
    new = finetune(src, "sr:4", TINY.with_(iterations=0), allow_new_task=True)
    assert np.array_equal(new.params["body.stages.0.conv1.weight"], src.params["body.stages.0.conv1.weight"])


def test_finetune_lowers_held_out_loss():
    src = pretrain(NANO, TINY.with_(iterations=2))
    x, y = nano_batch("sr:2", seed=99, count=8)

    def held(ck):
        with no_grad():
            return batch_loss(ck.build(), "sr_x2", x, y).item()

    tuned = finetune(src, "sr:2", TINY.with_(iterations=30, batch=8, finetune_lr=1e-3))
    assert held(tuned) < held(src)
    assert tuned.train_config.regime == "single"


def test_evaluate_reports_means():
    model = build_model(NANO.with_tasks(["denoise:15"]), seed=0)
    rng = np.random.default_rng(0)
    pairs = [("a", rng.uniform(0, 1, (3, 16, 16)), rng.uniform(0, 1, (3, 16, 16))) for _ in range(2)]
    rep = evaluate(model, "denoise:15", pairs)
    assert rep["task"] == "denoise_g15" and len(rep["images"]) == 2
    assert rep["mean_psnr"] == pytest.approx(np.mean([r["psnr"] for r in rep["images"]]))
    with pytest.raises(ValueError):
        evaluate(model, "denoise:15", [])
    with pytest.raises(ValueError):
        evaluate(model, "denoise:15", [(np.zeros((3, 16, 16)), np.zeros((3, 8, 8)))])
