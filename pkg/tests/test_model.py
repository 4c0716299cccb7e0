import math

import numpy as np
import pytest

from edtkit.autodiff import Graph, Tensor, finite_diff_check, no_grad
from edtkit.autodiff import functional as F
from edtkit.model import (
    PRESETS,
    AntiFFN,
    ConfigError,
    CrossedLocalAttention,
    ModelConfig,
    TaskSpec,
    TransformerBlock,
    WindowSpec,
    attention_macs,
    build_model,
    count_macs,
    count_params,
    layer_table,
    load_config,
    parse_task,
    preset,
    shifted_window_mask,
    summarize,
    window_partition,
)
from edtkit.model.attention import relative_position_index, window_partition_nhwc

NANO = PRESETS["edt-nano"]


def zero_(module):
    for _, p in module.named_parameters():
        p.data = np.zeros(p.shape)


# -- windows -------------------------------------------------------------------


def test_partition_counts_for_default_window():
    x = Tensor(np.zeros((1, 180, 48, 48)))
    w, layout = window_partition(x, (6, 24))
    assert w.shape == (16, 144, 180)
    assert layout.num_windows == 16
    w, _ = window_partition(x, (24, 6))
    assert w.shape == (16, 144, 180)


def test_shift_is_half_window():
    win = WindowSpec()
    assert win.shift("h") == (3, 12)
    assert win.shift("v") == (12, 3)
    assert win.tile == 24


def test_partition_window_contents():
    x = np.arange(2 * 4 * 6, dtype=float).reshape(1, 2, 4, 6)
    w, _ = window_partition(Tensor(x), (2, 3))
    # window 1 is rows 0-1, cols 3-5; tokens are row-major inside it
    np.testing.assert_array_equal(w.data[1, :, 0], x[0, 0, 0:2, 3:6].ravel())
    np.testing.assert_array_equal(w.data[1, :, 1], x[0, 1, 0:2, 3:6].ravel())


def test_partition_roundtrip_random_shapes():
    rng = np.random.default_rng(0)
    for _ in range(24):
        a, b = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        H, W = int(rng.integers(a, 3 * a + 2)), int(rng.integers(b, 3 * b + 2))
        x = rng.standard_normal((int(rng.integers(1, 3)), int(rng.integers(1, 4)), H, W))
        for shift in [(0, 0), (a // 2, b // 2)]:
            w, layout = window_partition(Tensor(x), (a, b), shift)
            assert np.array_equal(layout.reverse(w).data, x)


def test_partition_rejects_bad_window():
    with pytest.raises(ValueError):
        window_partition(Tensor(np.zeros((1, 1, 4, 4))), (0, 2))


@pytest.mark.parametrize("padded,window,shift", [((4, 8), (2, 4), (1, 2)), ((12, 12), (6, 3), (3, 1)), ((6, 6), (3, 3), (1, 1))])
def test_shift_mask_blocks_exactly_wrapped_pairs(padded, window, shift):
    hp, wp = padded
    a, b = window
    mask = shifted_window_mask(padded, window, shift)
    gh, gw = hp // a, wp // b
    assert mask.shape == (gh * gw, a * b, a * b)
    for wi in range(gh * gw):
        r0, c0 = (wi // gw) * a, (wi % gw) * b
        cells = [(r0 + i, c0 + j) for i in range(a) for j in range(b)]
        orig = [((r + shift[0]) % hp, (c + shift[1]) % wp) for r, c in cells]
        for p in range(a * b):
            for q in range(a * b):
                # a pair is legal iff rolling did not separate the two cells
                same = all(
                    orig[p][k] - orig[q][k] == cells[p][k] - cells[q][k] for k in range(2)
                )
                assert (mask[wi, p, q] == 0.0) == same


def test_relative_position_index_range_and_symmetry():
    idx = relative_position_index((2, 3))
    assert idx.shape == (6, 6)
    assert idx.min() == 0 and idx.max() == 3 * 5 - 1
    n = 3 * 5
    np.testing.assert_array_equal(idx + idx.T, np.full((6, 6), n - 1))
    assert np.all(np.diag(idx) == (n - 1) // 2)


# -- attention -------------------------------------------------------------------


def test_attention_mac_formula():
    assert attention_macs(48, 48, 180, 6, 24) == 418_037_760
    attn = CrossedLocalAttention(180, 6, WindowSpec(6, 24), np.random.default_rng(0))
    (row,) = attn.layer_rows((48, 48), "attn")
    assert row.macs == 4 * 48 * 48 * 180**2 + 2 * 6 * 24 * 48 * 48 * 180
    assert row.params == 180 * 540 + 540 + 180 * 180 + 180


def test_branch_matches_scalar_softmax_oracle():
    attn = CrossedLocalAttention(2, 1, WindowSpec(1, 3), np.random.default_rng(0))
    q = np.array([0.3, -1.2, 0.8])
    k = np.array([1.0, 0.5, -0.7])
    v = np.array([2.0, -1.0, 0.25])
    t = lambda a: Tensor(a.reshape(1, 1, 3, 1))  # noqa: E731
    y, rec = attn.branch(t(q), t(k), t(v), "h")
    logits = np.outer(q, k)
    p = np.exp(logits - logits.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    np.testing.assert_allclose(y.data.ravel(), p @ v, rtol=1e-14)
    np.testing.assert_allclose(rec.weights[0, 0], p, rtol=1e-14)


def test_uniform_logits_average_values():
    attn = CrossedLocalAttention(2, 1, WindowSpec(1, 3), np.random.default_rng(0))
    z = Tensor(np.zeros((1, 1, 3, 1)))
    v = Tensor(np.array([3.0, 6.0, 9.0]).reshape(1, 1, 3, 1))
    y, rec = attn.branch(z, z, v, "h")
    np.testing.assert_allclose(y.data.ravel(), [6.0, 6.0, 6.0], rtol=1e-15)
    np.testing.assert_allclose(rec.weights, 1 / 3, rtol=1e-15)


def test_attention_rows_are_stochastic_with_channel_split_shapes():
    C = 16
    attn = CrossedLocalAttention(C, 2, WindowSpec(2, 4), np.random.default_rng(1))
    x = Tensor(np.random.default_rng(2).standard_normal((2, 8, 8, C)))
    y, (rh, rv) = attn(x, shifted=True)
    assert y.shape == x.shape
    assert rh.window == (2, 4) and rv.window == (4, 2)
    assert rh.weights.shape == (2 * 8, 2, 8, 8)
    np.testing.assert_allclose(rh.weights.sum(-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(rv.weights.sum(-1), 1.0, atol=1e-12)


def test_zero_projection_gives_zero_output():
    attn = CrossedLocalAttention(8, 2, WindowSpec(2, 4), np.random.default_rng(0))
    attn.proj.weight.data[:] = 0
    attn.proj.bias.data[:] = 0
    y, _ = attn(Tensor(np.random.default_rng(1).standard_normal((1, 4, 4, 8))))
    assert np.array_equal(y.data, np.zeros((1, 4, 4, 8)))


def test_branch_gradient_ignores_other_half():
    # the horizontal branch reads only the first half of q, k and v
    C, half = 8, 4
    attn = CrossedLocalAttention(C, 2, WindowSpec(2, 4), np.random.default_rng(0))
    qkv = Tensor(np.random.default_rng(1).standard_normal((1, 4, 4, 3 * C)), requires_grad=True)
    r = Tensor(np.random.default_rng(2).standard_normal((1, 4, 4, half)))
    with Graph() as g:
        q, k, v = qkv[..., :C], qkv[..., C : 2 * C], qkv[..., 2 * C :]
        yh, _ = attn.branch(q[..., :half], k[..., :half], v[..., :half], "h")
        loss = F.sum(F.mul(yh, r))
    grad = g.backward(loss, wrt=[qkv])[qkv]
    for lo in (0, C, 2 * C):
        assert np.all(grad[..., lo + half : lo + C] == 0.0)
        assert np.any(grad[..., lo : lo + half] != 0.0)


def test_window_permutation_equivariance():
    # with no positional bias, swapping whole 4x4 tiles commutes with attention
    C = 8
    attn = CrossedLocalAttention(C, 2, WindowSpec(2, 4), np.random.default_rng(0))
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 8, 12, C))
    tiles = [(i, j) for i in range(2) for j in range(3)]
    perm = rng.permutation(len(tiles))

    def permute(a):
        out = np.empty_like(a)
        for dst, src in enumerate(perm):
            (di, dj), (si, sj) = tiles[dst], tiles[src]
            out[:, 4 * di : 4 * di + 4, 4 * dj : 4 * dj + 4] = a[:, 4 * si : 4 * si + 4, 4 * sj : 4 * sj + 4]
        return out

    y, _ = attn(Tensor(x))
    yp, _ = attn(Tensor(permute(x)))
    np.testing.assert_allclose(yp.data, permute(y.data), rtol=0, atol=1e-13)


def test_attention_rejects_bad_head_split():
    with pytest.raises(ValueError):
        CrossedLocalAttention(12, 4, WindowSpec(2, 2), np.random.default_rng(0))
    with pytest.raises(ValueError):
        CrossedLocalAttention(7, 1, WindowSpec(2, 2), np.random.default_rng(0))


# -- feed-forward and blocks -----------------------------------------------------


def test_antiffn_zero_output_projection():
    ffn = AntiFFN(6, 2, np.random.default_rng(0))
    ffn.fc2.weight.data[:] = 0
    ffn.fc2.bias.data[:] = 0
    assert np.array_equal(ffn(Tensor(np.ones((1, 5, 5, 6)))).data, np.zeros((1, 5, 5, 6)))


def test_antiffn_reduces_to_mlp_with_identity_depthwise():
    ffn = AntiFFN(4, 2, np.random.default_rng(0))
    k = ffn.dwconv.weight.data.copy()
    k[:] = 0
    k[:, :, 2, 2] = 1
    ffn.dwconv.weight.data = k
    ffn.dwconv.bias.data = np.zeros_like(ffn.dwconv.bias.data)
    x = np.random.default_rng(1).standard_normal((1, 6, 7, 4))

    def gelu(z):
        return 0.5 * z * (1 + np.tanh(np.sqrt(2 / np.pi) * (z + 0.044715 * z**3)))

    h = gelu(gelu(x @ ffn.fc1.weight.data + ffn.fc1.bias.data))
    ref = h @ ffn.fc2.weight.data + ffn.fc2.bias.data
    np.testing.assert_allclose(ffn(Tensor(x)).data, ref, rtol=1e-12, atol=1e-14)


def test_block_is_identity_when_residual_branches_vanish():
    blk = TransformerBlock(8, 2, WindowSpec(2, 4), 2, shifted=True, rng=np.random.default_rng(0))
    for lin in (blk.attn.proj, blk.ffn.fc2):
        lin.weight.data[:] = 0
        lin.bias.data[:] = 0
    x = np.random.default_rng(1).standard_normal((1, 4, 8, 8))
    y, mid, _ = blk(Tensor(x))
    assert np.array_equal(y.data, x)
    assert np.array_equal(mid.data, x)


@pytest.mark.parametrize("shifted", [False, True])
def test_block_gradient(shifted):
    rng = np.random.default_rng(0)
    blk = TransformerBlock(4, 1, WindowSpec(2, 2), 2, shifted=shifted, rng=rng)
    x = Tensor(rng.standard_normal((1, 4, 4, 4)), requires_grad=True)
    r = Tensor(rng.standard_normal((1, 4, 4, 4)))
    params = [p for _, p in blk.named_parameters()]
    # the small-init norm2 gradients are roundoff-limited at step 1e-6
    err = finite_diff_check(lambda x, *ps: F.sum(F.mul(blk(x)[0], r)), [x] + params, step=1e-5, max_coords=10)
    assert err < 1e-6


# -- full network ------------------------------------------------------------------


ALL_TASKS = ["sr:2", "sr:3", "sr:4", "denoise:25", "derain:heavy"]


@pytest.mark.parametrize("H,W", [(8, 8), (11, 13), (17, 5)])
def test_output_shapes_for_every_task(H, W):
    model = build_model(NANO.with_tasks(ALL_TASKS), seed=0)
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (2, 3, H, W)))
    with no_grad():
        for t in map(parse_task, ALL_TASKS):
            y = model.forward(t.id, x)
            assert y.shape == (2, 3, H * t.scale, W * t.scale)


def test_forward_input_validation():
    model = build_model(NANO, seed=0)
    with pytest.raises(ValueError):
        model.forward("sr_x2", Tensor(np.zeros((1, 4, 8, 8))))
    with pytest.raises(KeyError):
        model.forward("denoise_g15", Tensor(np.zeros((1, 3, 8, 8))))


def test_high_res_body_runs_at_quarter_size():
    model = build_model(NANO.with_tasks(["denoise:15"]), seed=0)
    with no_grad():
        _, trace = model.forward("denoise_g15", np.zeros((1, 3, 48, 48)), capture=True)
    assert trace["head.out"].shape == (1, 8, 12, 12)
    assert trace["stage0.block0.attn"].shape == (1, 8, 12, 12)
    assert trace["tail.feat"].shape[2:] == (48, 48)
    assert model.input_multiple("denoise_g15") == 16
    assert build_model(NANO).input_multiple("sr_x2") == 4


def test_parameter_accounting_identity_across_tasks():
    cfg = NANO.with_tasks(["sr:2", "sr:4", "denoise:15"])
    model = build_model(cfg, seed=0)
    body = model.body.num_params()
    heads = {t: model.encoders[t].num_params() + model.decoders[t].num_params() for t in cfg.task_ids}
    assert count_params(model) == body + sum(heads.values())
    for t in cfg.task_ids:
        assert count_params(model, t) == body + heads[t]
        rows = layer_table(model, (32, 32), t)
        assert sum(r.params for r in rows) == count_params(model, t)
    # the x4 decoder has two upsampling convs
    assert heads["sr_x4"] > heads["sr_x2"]


def test_summary_totals_match_rows():
    model = build_model(preset("edt-t"), seed=0)
    s = summarize(model, (192, 192))
    assert s["params"] == sum(r["params"] for r in s["layers"])
    assert s["macs"] == sum(r["macs"] for r in s["layers"])
    assert s["params"] == sum(g["params"] for g in s["modules"].values())
    assert set(s["modules"]) == {"encoders", "body", "decoders"}


def test_zero_stage_model_is_encoder_decoder():
    cfg = ModelConfig(channels=8, stages=0, heads=2, window=WindowSpec(2, 4), tasks=("sr:2",))
    model = build_model(cfg, seed=0)
    assert model.body.num_params() == 0
    y, trace = model.forward("sr_x2", np.random.default_rng(0).uniform(0, 1, (1, 3, 8, 8)), capture=True)
    assert y.shape == (1, 3, 16, 16)
    assert trace.labels == ["head.conv", "head.out", "tail.feat", "tail.out"]


def test_cost_monotone_in_variant_and_input():
    names = ["edt-t", "edt-s", "edt-b", "edt-l"]
    models = [build_model(preset(n), seed=0) for n in names]
    params = [count_params(m) for m in models]
    macs = [count_macs(m, (192, 192)) for m in models]
    assert params == sorted(params) and len(set(params)) == 4
    assert macs == sorted(macs)
    m = models[0]
    assert count_macs(m, (96, 96)) < count_macs(m, (192, 192)) < count_macs(m, (384, 384))


def test_mac_count_accounts_for_padding():
    model = build_model(NANO, seed=0)
    # 9x9 is padded up to 12x12 before the body
    assert count_macs(model, (9, 9)) == count_macs(model, (12, 12))


def test_trace_length_matches_depth():
    model = build_model(preset("edt-b"), seed=0)
    with no_grad():
        y, trace = model.forward("denoise_g15", np.zeros((1, 3, 96, 96)), capture=True)
    assert y.shape == (1, 3, 96, 96)
    assert len(trace) == 4 + 2 * 6 * 6
    assert len(trace.attention) == 2 * 6 * 6
    assert trace.labels[2] == "stage0.block0.attn"


def test_construction_is_deterministic():
    a, b, c = build_model(NANO, seed=3), build_model(NANO, seed=3), build_model(NANO, seed=4)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert any(not np.array_equal(sa[k], sc[k]) for k in sa)
    x = np.random.default_rng(0).uniform(0, 1, (1, 3, 8, 8))
    with no_grad():
        assert np.array_equal(a.forward("sr_x2", x).data, b.forward("sr_x2", x).data)


def test_zero_tail_gives_zero_output():
    model = build_model(NANO.with_tasks(["sr:2", "denoise:15"]), seed=0)
    x = np.random.default_rng(0).uniform(0, 1, (1, 3, 16, 16))
    with no_grad():
        for t in model.config.task_ids:
            zero_(model.decoders[t].conv_last)
            assert np.array_equal(model.forward(t, x).data, np.zeros_like(model.forward(t, x).data))


def test_stage_bias_table_is_shared_by_blocks():
    model = build_model(NANO, seed=0)
    names = [n for n, _ in model.named_parameters()]
    assert sum("bias.h.table" in n for n in names) == 1
    stage = model.body.stages[0]
    assert all(blk.attn._biases is stage.bias for blk in stage.blocks)
    off = build_model(NANO.__class__(**{**NANO.__dict__, "rel_pos_bias": False}), seed=0)
    assert off.num_params() == model.num_params() - sum(b.table.size for b in stage.bias.values())


def test_state_dict_roundtrip_and_strictness():
    a, b = build_model(NANO, seed=0), build_model(NANO, seed=1)
    b.load_state_dict(a.state_dict())
    assert all(np.array_equal(a.state_dict()[k], v) for k, v in b.state_dict().items())
    partial = {k: v for k, v in a.state_dict().items() if k.startswith("body.")}
    with pytest.raises(KeyError):
        b.load_state_dict(partial)
    missing = b.load_state_dict(partial, strict=False)
    assert missing and all(not m.startswith("body.") for m in missing)
    bad = dict(a.state_dict())
    k = next(iter(bad))
    bad[k] = np.zeros((1,))
    with pytest.raises(ValueError):
        b.load_state_dict(bad)


# -- configuration ---------------------------------------------------------------


def test_parse_task_forms():
    assert parse_task("sr:3") == TaskSpec("sr", 3)
    assert parse_task("sr_x4") == TaskSpec("sr", 4)
    assert parse_task("denoise_g50").id == "denoise_g50"
    assert parse_task({"kind": "derain", "parameter": "light"}).id == "derain_light"
    assert parse_task("denoise") == TaskSpec("denoise", 15)
    for bad in ["sr:5", "blur:3", "denoise:abc", "derain:medium"]:
        with pytest.raises(ConfigError):
            parse_task(bad)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(channels=9, stages=1, heads=1)
    with pytest.raises(ConfigError):
        ModelConfig(channels=12, stages=1, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(channels=8, stages=1, heads=2, tasks=("sr:2", "sr_x2"))
    with pytest.raises(ConfigError):
        preset("edt-xl")
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"preset": "edt-t", "depth": 3})


def test_config_file_and_dict_roundtrip(tmp_path):
    cfg = NANO.with_tasks(["sr:2", "derain:light"])
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    p = tmp_path / "m.yaml"
    p.write_text("preset: edt-t\nstages: 2\nwindow: {h: 4, w: 8}\ntasks: [denoise:25]\n")
    got = load_config(p)
    assert (got.channels, got.stages, got.window, got.task_ids) == (60, 2, WindowSpec(4, 8), ["denoise_g25"])
    p.write_text("- just a list\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_edt_b_window_tile():
    assert preset("edt-b").window.tile == math.lcm(6, 24)


def test_partition_nhwc_matches_nchw():
    x = np.random.default_rng(0).standard_normal((2, 3, 6, 9))
    a, _ = window_partition(Tensor(x), (3, 3), (1, 1))
    b, _ = window_partition_nhwc(Tensor(x.transpose(0, 2, 3, 1)), (3, 3), (1, 1))
    assert np.array_equal(a.data, b.data)
