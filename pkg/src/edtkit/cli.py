"""``edt`` command-line interface.

Exit codes: 0 success, 1 validation failure (bad arguments or config,
failed checks), 2 I/O error (missing or corrupt files).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .autodiff import FormatError, GRAD_CASES, no_grad, run_grad_cases
from .model import ConfigError, build_model, load_config, parse_task, preset, summarize

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
GRAD_TOL = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _hw(text: str) -> tuple[int, int]:
    try:
        parts = [int(v) for v in text.lower().replace("*", "x").split("x")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}, expected HxW") from None
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"bad size {text!r}, expected HxW")
    return parts[0], parts[1]


def _model_config(args, tasks=None):
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = preset(args.preset or "edt-nano")
    if tasks:
        cfg = cfg.with_tasks(tasks)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _peek_checkpoint(path):
    from .training import Checkpoint

    return Checkpoint.load(path)


# -- commands ----------------------------------------------------------------


def cmd_info(args) -> int:
    task = parse_task(args.task) if args.task else None
    cfg = _model_config(args, [task] if task else None)
    model = build_model(cfg, seed=args.seed)
    rep = summarize(model, args.input, cfg.tasks[0].id)
    if args.json:
        if not args.layers:
            rep.pop("layers")
        print(json.dumps(rep, indent=2))
        return EXIT_OK
    print(f"variant   {rep['variant']}")
    print(f"task      {rep['task']}")
    print(f"input     {args.input[0]}x{args.input[1]}")
    print(f"params    {rep['params']:,} ({rep['params'] / 1e6:.2f}M)")
    print(f"MACs      {rep['macs']:,} ({rep['macs'] / 1e9:.2f}G)")
    print("modules")
    for name, g in rep["modules"].items():
        print(f"  {name:<10} params {g['params']:>12,}  MACs {g['macs']:>16,}")
    if args.layers:
        print("layers")
        for r in rep["layers"]:
            print(f"  {r['name']:<44} {r['kind']:<18} {r['params']:>10,} {r['macs']:>15,}")
    return EXIT_OK


def cmd_degrade(args) -> int:
    from .data import degrade, derive_seed, list_images, load_png, save_png, synthetic_image, write_manifest

    task = parse_task(args.task)
    out = _out(args)
    clean_dir, deg_dir = out / "clean", out / "degraded"
    clean_dir.mkdir(exist_ok=True)
    deg_dir.mkdir(exist_ok=True)
    if args.input:
        src = Path(args.input)
        paths = [src] if src.is_file() else list_images(src)
        items = [(p.stem + ".png", load_png(p)) for p in paths]
    else:
        items = [(f"img_{i:04d}.png", synthetic_image(args.size, derive_seed(args.seed, i))) for i in range(args.synthetic)]
    if not items:
        raise ValueError("no input images")
    for i, (name, clean) in enumerate(items):
        if task.kind == "sr":
            s = task.scale
            H, W = clean.shape[-2:]
            clean = clean[:, : H - H % s, : W - W % s]
        save_png(clean_dir / name, clean)
        # degrade the 8-bit round trip so the pair on disk is self-consistent
        clean = load_png(clean_dir / name)
        save_png(deg_dir / name, degrade(clean, task, derive_seed(args.seed, i)))
    write_manifest(clean_dir)
    write_manifest(deg_dir)
    print(f"wrote {len(items)} {task} pairs under {out}")
    return EXIT_OK


def _train_config(args, tasks):
    from .training import TrainConfig

    kw = dict(regime=args.regime, tasks=tuple(tasks), batch=args.batch, iterations=args.iterations, seed=args.seed)
    if args.patch is not None:
        kw["patch"] = args.patch
    if args.lr is not None:
        kw["lr"] = args.lr
    if args.log_interval is not None:
        kw["log_interval"] = args.log_interval
    return TrainConfig(**kw)


def cmd_train(args) -> int:
    from .training import Checkpoint, JsonlLogger, pretrain

    tasks = [parse_task(t) for t in args.tasks.split(",")] if args.tasks else None
    mcfg = _model_config(args, tasks)
    tcfg = _train_config(args, mcfg.tasks)
    out = _out(args)
    resume = Checkpoint.load(args.resume) if args.resume else None
    log = JsonlLogger(out / "log.jsonl", wallclock=not args.no_wallclock)
    ck = pretrain(mcfg, tcfg, data=args.data, log=log, resume=resume)
    ck.save(out / "checkpoint.edt")
    last = {r["task"]: r["loss"] for r in log.records}
    print(f"trained {ck.iteration} iterations; last losses {json.dumps(last)}; checkpoint {out / 'checkpoint.edt'}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    from .training import JsonlLogger, finetune

    ck = _peek_checkpoint(args.checkpoint)
    task = parse_task(args.task)
    args.regime = "single"
    tcfg = _train_config(args, [task])
    out = _out(args)
    log = JsonlLogger(out / "log.jsonl", wallclock=not args.no_wallclock)
    res = finetune(ck, task, tcfg, data=args.data, log=log, allow_new_task=args.allow_new_task)
    res.save(out / "checkpoint.edt")
    print(f"fine-tuned {task.id} for {res.iteration} iterations; checkpoint {out / 'checkpoint.edt'}")
    return EXIT_OK


def _pairs(args, task):
    from .data import degrade, derive_seed, load_paired, synthetic_image

    if args.data:
        return load_paired(args.data)
    pairs = []
    for i in range(args.synthetic):
        clean = synthetic_image(args.size, derive_seed(args.seed, 50_000 + i))
        pairs.append((f"synthetic_{i}", degrade(clean, task, derive_seed(args.seed, i)), clean))
    return pairs


def cmd_eval(args) -> int:
    from .training import evaluate

    ck = _peek_checkpoint(args.checkpoint)
    task = parse_task(args.task) if args.task else ck.model_config.tasks[0]
    model = ck.build()
    res = evaluate(model, task, _pairs(args, task), border=args.border)
    out = _out(args)
    (out / "eval.json").write_text(json.dumps(res, indent=2) + "\n")
    for r in res["images"]:
        print(f"{r['name']:<24} PSNR {r['psnr']:7.3f}  PSNR-Y {r['psnr_y']:7.3f}")
    print(f"{'mean':<24} PSNR {res['mean_psnr']:7.3f}  PSNR-Y {res['mean_psnr_y']:7.3f}")
    return EXIT_OK


def _model_for(args):
    """Model from --checkpoint, else a seeded fresh build from --preset/--config."""
    if args.checkpoint:
        ck = _peek_checkpoint(args.checkpoint)
        model = ck.build()
        task = parse_task(args.task) if args.task else ck.model_config.tasks[0]
    else:
        task = parse_task(args.task or "sr:2")
        model = build_model(_model_config(args, [task]), seed=args.seed)
    return model, task


def _images(args):
    from .data import derive_seed, list_images, load_png, synthetic_image

    if args.data:
        imgs = [load_png(p) for p in list_images(args.data)]
    else:
        imgs = [synthetic_image(args.size, derive_seed(args.seed, 70_000 + i)) for i in range(args.synthetic)]
    if args.crop:
        c = args.crop
        for i, im in enumerate(imgs):
            if im.shape[-2] < c or im.shape[-1] < c:
                raise ValueError(f"image {i} is smaller than the crop {c}")
            top, left = (im.shape[-2] - c) // 2, (im.shape[-1] - c) // 2
            imgs[i] = im[:, top : top + c, left : left + c]
    if not imgs:
        raise ValueError("no images to trace")
    if len({im.shape for im in imgs}) != 1:
        raise ValueError("traced images must share one size; pass --crop")
    return imgs


def _run_traces(model, task, imgs):
    from .model.edt import ActivationTrace

    traces = []
    with no_grad():
        for im in imgs:
            _, tr = model.forward(task.id, im[None], capture=True)
            traces.append(tr)
    merged = ActivationTrace(task.id, list(traces[0].labels))
    merged.arrays = [np.concatenate([t.arrays[i] for t in traces], axis=0) for i in range(len(merged.labels))]
    merged.attention = [r for t in traces for r in t.attention]
    return merged


def cmd_trace(args) -> int:
    from .diagnostics import save_trace

    model, task = _model_for(args)
    tr = _run_traces(model, task, _images(args))
    out = _out(args)
    name = args.name or "trace.edt"
    save_trace(out / name, tr, model=model.config.variant)
    print(f"traced {len(tr)} layers over {tr.arrays[0].shape[0]} images -> {out / name}")
    return EXIT_OK


def cmd_cka(args) -> int:
    from .diagnostics import cka_map, load_trace, minibatch_cka_map, similarity_ratio
    from .diagnostics import write_map_csv, write_map_svg, write_ratios_csv

    a, _ = load_trace(args.trace_a)
    b = load_trace(args.trace_b)[0] if args.trace_b else None
    ma = {v.shape[0] for v in a.values()}
    mb = ma if b is None else {v.shape[0] for v in b.values()}
    if ma != mb or len(ma) != 1:
        raise ValueError(f"traces disagree on the number of data points: {sorted(ma)} vs {sorted(mb)}")
    if args.minibatch:
        cmap = minibatch_cka_map(a, b, batch_size=args.minibatch, passes=args.passes, seed=args.seed)
    else:
        cmap = cka_map(a, b, unbiased=args.unbiased)
    out = _out(args)
    write_map_csv(out / "map.csv", cmap)
    write_map_svg(out / "map.svg", cmap, cell=args.cell)
    if args.threshold is not None:
        write_ratios_csv(out / "ratios.csv", cmap.labels_a, similarity_ratio(cmap, args.threshold), args.threshold)
    print(f"{cmap.estimator} CKA map {cmap.shape[0]}x{cmap.shape[1]} -> {out / 'map.csv'}")
    return EXIT_OK


def cmd_attn_dist(args) -> int:
    from .diagnostics import attention_profile

    model, task = _model_for(args)
    tr = _run_traces(model, task, _images(args))
    prof = attention_profile(tr.attention)
    out = _out(args)
    prof.to_csv(out / "attn.csv")
    print(f"{len(prof.recorded())} head records ({len(prof) - len(prof.recorded())} shifted excluded) -> {out / 'attn.csv'}")
    return EXIT_OK


def cmd_check_grad(args) -> int:
    if args.preset and args.ops == "all":
        names = [args.preset] if args.preset in GRAD_CASES else None
        if names is None:
            raise UsageError(f"no end-to-end gradient case for preset {args.preset!r}")
    elif args.ops == "all":
        names = list(GRAD_CASES)
    else:
        names = [n.strip() for n in args.ops.split(",") if n.strip()]
        unknown = [n for n in names if n not in GRAD_CASES]
        if unknown:
            raise UsageError(f"unknown op(s) {unknown}; choose from {sorted(GRAD_CASES)}")
        if args.preset:
            names.append(args.preset)
    failed = 0
    print(f"{'case':<20} {'max rel err':>12}  result")
    for name, err in run_grad_cases(names, seed=args.seed):
        ok = err < GRAD_TOL
        failed += not ok
        print(f"{name:<20} {err:12.3e}  {'pass' if ok else 'FAIL'}")
    return EXIT_OK if failed == 0 else EXIT_INVALID


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON model config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out", help="output directory")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--preset", help="edt-t | edt-s | edt-b | edt-l | edt-nano")

    images = argparse.ArgumentParser(add_help=False)
    images.add_argument("--data", help="directory of PNGs")
    images.add_argument("--synthetic", type=int, default=8, help="synthetic images when --data is absent")
    images.add_argument("--size", type=_hw, default=(64, 64), help="synthetic image size HxW")

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--iterations", type=int, default=200)
    train.add_argument("--batch", type=int, default=8)
    train.add_argument("--patch", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--log-interval", type=int)
    train.add_argument("--data", help="directory of clean PNGs (synthetic images otherwise)")
    train.add_argument("--no-wallclock", action="store_true", help="write 0.0 wallclock so logs are byte-stable")

    p = _Parser(prog="edt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("info", parents=[common, model], help="parameter/MAC report")
    s.add_argument("--task", default="denoise:15")
    s.add_argument("--input", type=_hw, default=(192, 192))
    s.add_argument("--json", action="store_true")
    s.add_argument("--layers", action="store_true", help="include the per-layer table")
    s.set_defaults(func=cmd_info)

    s = sub.add_parser("degrade", parents=[common], help="synthesize (degraded, clean) pairs")
    s.add_argument("--task", required=True)
    s.add_argument("--input", help="PNG file or directory (synthetic images otherwise)")
    s.add_argument("--synthetic", type=int, default=4)
    s.add_argument("--size", type=_hw, default=(96, 96))
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("train", parents=[common, model, train], help="toy pre-training")
    s.add_argument("--regime", default="single", choices=["single", "multi_unrelated", "multi_related"])
    s.add_argument("--tasks", help="comma-separated, e.g. sr:2,sr:3,sr:4")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("finetune", parents=[common, train], help="single-task fine-tuning")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--task", required=True)
    s.add_argument("--allow-new-task", action="store_true")
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("eval", parents=[common, images], help="PSNR / PSNR-Y on paired data")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--task")
    s.add_argument("--border", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    for name, func, hlp in (
        ("trace", cmd_trace, "dump per-layer activations"),
        ("attn-dist", cmd_attn_dist, "per-head attention distance CSV"),
    ):
        s = sub.add_parser(name, parents=[common, model, images], help=hlp)
        s.add_argument("--checkpoint")
        s.add_argument("--task")
        s.add_argument("--crop", type=int)
        if name == "trace":
            s.add_argument("--name", help="dump filename (default trace.edt)")
        s.set_defaults(func=func)

    s = sub.add_parser("cka", parents=[common], help="CKA map between two traces")
    s.add_argument("trace_a")
    s.add_argument("trace_b", nargs="?")
    s.add_argument("--minibatch", type=int)
    s.add_argument("--passes", type=int, default=10)
    s.add_argument("--unbiased", action="store_true", help="unbiased HSIC for the full-data map")
    s.add_argument("--threshold", type=float)
    s.add_argument("--cell", type=int, default=8)
    s.set_defaults(func=cmd_cka)

    s = sub.add_parser("check-grad", parents=[common, model], help="finite-difference gradient suite")
    s.add_argument("--ops", default="all", help="all or comma-separated case names")
    s.set_defaults(func=cmd_check_grad)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FormatError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
