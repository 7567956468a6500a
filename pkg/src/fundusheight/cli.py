"""Command-line surface: prep, synth, train, eval, infer, ablate.

Every command writes under --out with a fixed tree (checkpoints/, reports/,
figures/, logs/) and is reproducible from (config digest, seed); the run
manifest in reports/ records both. Exit codes: 0 success, 1 usage or
configuration problem, 2 data problem, 3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .codec import ColorMap, decode_height, load_colormap_file
from .config import load_config, preset
from .data import (
    RAW,
    FundusImage,
    apply_partition,
    augment_corpus,
    build_bank,
    load_image,
    load_manifest,
    make_splits,
    save_image,
    write_corpus,
)
from .errors import ConfigError, DataError, FundusHeightError, TrainingDivergenceError
from .metrics import evaluate, load_eval_discriminator
from .preprocess import clahe, normalize, resize
from .synth import synthesize_to_dir
from .trainer import (
    fit_progressive,
    load_full,
    models_from_checkpoint,
    save_full,
    write_loss_csv,
)

OUTPUT_DIRS = ("checkpoints", "reports", "figures", "logs")


class _Parser(argparse.ArgumentParser):
    # usage problems must exit 1, not argparse's default 2
    def error(self, message):
        raise ConfigError(message)


def _add_common(p):
    p.add_argument("--config", help="run config JSON; omit to use the --scale preset")
    p.add_argument("--seed", type=int, default=None, help="override the training seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--ckpt", default=None, help="checkpoint path")
    p.add_argument("--deterministic", type=_bool_flag, default=True, metavar="BOOL")
    p.add_argument("--scale", choices=("desk", "full"), default="desk")


def _bool_flag(value):
    lowered = str(value).lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def build_parser():
    parser = _Parser(prog="fundusheight", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prep", help="CLAHE + resize a corpus into a training layout")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--size", type=int, default=None, help="target side length")
    p.add_argument("--clip-limit", type=float, default=None)
    p.add_argument("--tile-grid", type=int, nargs=2, default=None, metavar=("GY", "GX"))
    p.add_argument("--channels", choices=("rgb", "luminance"), default=None)
    _add_common(p)

    p = sub.add_parser("synth", help="generate a synthetic fundus/heightmap corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    _add_common(p)

    p = sub.add_parser("train", help="progressive adversarial training")
    p.add_argument("--data", default=None, help="corpus root (overrides config data_root)")
    _add_common(p)

    p = sub.add_parser("eval", help="metric report for a checkpoint on the test split")
    p.add_argument("--data", default=None)
    _add_common(p)

    p = sub.add_parser("infer", help="predict heightmaps for fundus images")
    p.add_argument("inputs", nargs="+", help="fundus PNG paths")
    _add_common(p)

    p = sub.add_parser("ablate", help="train/eval sweeps with merged tables and charts")
    p.add_argument("--sweep", choices=("stacks", "supervision", "pixel_norm"), required=True)
    p.add_argument("--stacks", type=int, nargs="+", default=(1, 2, 3, 4, 5))
    p.add_argument("--data", default=None)
    _add_common(p)

    return parser


def _load_run_config(args):
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = preset(args.scale)
    updates = {}
    if getattr(args, "out", None):
        updates["out_dir"] = args.out
    if getattr(args, "data", None):
        updates["data_root"] = args.data
    if updates:
        cfg = replace(cfg, **updates)
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    if not args.deterministic:
        cfg = replace(cfg, train=replace(cfg.train, deterministic=False))
    return cfg


def _out_tree(out_dir):
    out = Path(out_dir)
    for name in OUTPUT_DIRS:
        (out / name).mkdir(parents=True, exist_ok=True)
    return out


def _colormap(cfg):
    if cfg.colormap_path:
        cmap, hmin, hmax = load_colormap_file(cfg.colormap_path)
        return cmap, hmin, hmax
    return ColorMap(), 0.0, 500.0


def _write_manifest(out, cfg, command, extra=None):
    payload = {
        "command": command,
        "config_digest": cfg.digest(),
        "seed": cfg.train.seed,
        "scale": cfg.scale,
        "version": __version__,
    }
    payload.update(extra or {})
    path = out / "reports" / "run_manifest.json"
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return path


def _prepared_bank(cfg, seed=None):
    if not cfg.data_root:
        raise DataError("no data_root configured; run `fundusheight synth` and pass --data")
    pairs = load_manifest(cfg.data_root)
    augmented = augment_corpus(pairs)
    partition = make_splits(augmented, seed=cfg.train.seed if seed is None else seed)
    apply_partition(augmented, partition)
    return build_bank(augmented)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args):
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    out = args.out or "synth_corpus"
    seed = args.seed if args.seed is not None else 0
    manifest = synthesize_to_dir(out, args.n, seed=seed, size=(args.size, args.size))
    print(f"wrote {args.n} pairs under {out} ({manifest})")
    return 0


def _prep_digest(in_dir, params):
    h = hashlib.sha256()
    manifest = Path(in_dir) / "manifest.csv"
    h.update(manifest.read_bytes())
    h.update(json.dumps(params, sort_keys=True).encode())
    return h.hexdigest()


def cmd_prep(args):
    cfg = _load_run_config(args)
    size = args.size or cfg.image_size
    clip = args.clip_limit if args.clip_limit is not None else cfg.clahe_clip
    grid = tuple(args.tile_grid) if args.tile_grid else tuple(cfg.clahe_grid)
    channels = args.channels or cfg.clahe_channels
    out = Path(args.out or "prepped_corpus")

    params = {"size": size, "clip": clip, "grid": list(grid), "channels": channels}
    digest = _prep_digest(args.in_dir, params)
    stamp = out / "prep_digest.json"
    if stamp.exists():
        with open(stamp) as fh:
            if json.load(fh).get("digest") == digest:
                print(f"{out} is up to date; nothing to do")
                return 0

    pairs = load_manifest(args.in_dir)
    for pair in pairs:
        fundus = resize(pair.fundus.pixels, (size, size))
        pair.fundus = clahe(FundusImage(fundus, value_domain=RAW), clip, grid, channels)
        pair.target = resize(pair.target, (size, size))
    write_corpus(pairs, out)
    with open(stamp, "w") as fh:
        json.dump({"digest": digest, "params": params, "count": len(pairs)}, fh, indent=2)
    print(f"prepped {len(pairs)} pairs into {out}")
    return 0


def cmd_train(args):
    cfg = _load_run_config(args)
    out = _out_tree(cfg.out_dir)
    bank = _prepared_bank(cfg)
    ckpt = fit_progressive(
        bank,
        cfg.train,
        weights=cfg.weights,
        gen_cfg=cfg.generator,
        disc_cfg=cfg.discriminator,
        out_dir=out,
    )
    final_path = save_full(ckpt, out / "checkpoints" / "final.pt")
    write_loss_csv(ckpt.loss_rows, out / "logs" / "loss.csv")
    _write_val_csv(ckpt.val_rows, out / "logs" / "val.csv")
    from .report import plot_loss_curves

    if ckpt.loss_rows:
        plot_loss_curves(ckpt.loss_rows, out / "figures" / "loss_curves.png")
    _write_manifest(out, cfg, "train", {"final_checkpoint": str(final_path), "digest": ckpt.digest()})
    print(f"trained {cfg.train.epochs} epochs over stages {list(cfg.train.stages)}; final: {final_path}")
    return 0


def _write_val_csv(rows, path):
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=("epoch", "val_pixel"))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _check_config_against(cfg, ckpt):
    """With an explicit --config, its knobs must match what trained the checkpoint."""
    from dataclasses import asdict

    stored = {"generator": ckpt.gen_config, "discriminator": ckpt.disc_config, "train": ckpt.train_config}
    mismatched = []
    for name, snapshot in stored.items():
        current = asdict(getattr(cfg, name))
        mismatched.extend(
            f"{name}.{key}" for key, value in snapshot.items()
            if _plain(current.get(key)) != _plain(value)
        )
    if mismatched:
        raise ConfigError(f"config does not match checkpoint; differing fields: {mismatched}")


def _plain(value):
    return list(value) if isinstance(value, (tuple, list)) else value


def cmd_eval(args):
    cfg = _load_run_config(args)
    if not args.ckpt:
        raise ConfigError("eval needs --ckpt")
    out = _out_tree(cfg.out_dir)
    ckpt = load_full(args.ckpt)
    if args.config:
        _check_config_against(cfg, ckpt)
    gen, _ = models_from_checkpoint(ckpt)
    d_frozen, d_digest = load_eval_discriminator(args.ckpt)
    bank = _prepared_bank(cfg, seed=ckpt.seed)  # splits follow the training seed
    testset = bank.get("test")
    if testset is None:
        raise DataError("corpus has no test split; need more source images")
    cmap, hmin, hmax = _colormap(cfg)
    report = evaluate(gen, testset, d_frozen, cmap=cmap, height_min=hmin, height_max=hmax, d_digest=d_digest)
    report.to_json(out / "reports" / "metrics.json")
    report.write_csv(out / "reports" / "per_sample.csv")
    _dump_heads(gen, testset, out / "figures", limit=4)
    _write_manifest(out, cfg, "eval", {"checkpoint": str(args.ckpt), "d_digest": d_digest})
    print(
        f"evaluated {report.n_samples} samples: ssim={report.ssim:.4f} "
        f"lpips={report.lpips:.5f} mse={report.mse:.5f} psnr={report.psnr_db:.2f}dB "
        f"mae={report.mae_um:.1f}um"
    )
    return 0


def _dump_heads(gen, split, fig_dir, limit=4):
    import torch

    from .report import save_head_grid

    gen.eval()
    n = min(limit, len(split))
    with torch.no_grad():
        for i in range(n):
            x, y = split.take([i], "figure-dump")
            out = gen(x)
            save_head_grid(
                x[0], [h[0] for h in out.heads], out.final[0], y[0],
                Path(fig_dir) / f"heads_{split.ids[i]}.png",
            )


def cmd_infer(args):
    cfg = _load_run_config(args)
    if not args.ckpt:
        raise ConfigError("infer needs --ckpt")
    out = _out_tree(cfg.out_dir)
    ckpt = load_full(args.ckpt)
    gen, _ = models_from_checkpoint(ckpt)
    size = ckpt.disc_config.get("image_size", cfg.image_size)
    cmap, hmin, hmax = _colormap(cfg)

    import torch

    from .report import save_side_by_side

    written = []
    for input_path in args.inputs:
        pixels = load_image(input_path)
        if pixels.shape[:2] != (size, size):
            pixels = resize(pixels, (size, size))
        img = normalize(FundusImage(pixels, value_domain=RAW))
        x = torch.from_numpy(np.transpose(img.pixels.astype(np.float32), (2, 0, 1))[None])
        gen.eval()
        with torch.no_grad():
            pred = gen(x).final[0]
        pred_hwc = np.transpose(pred.numpy(), (1, 2, 0)).astype(np.float64)
        stem = Path(input_path).stem
        png = out / "reports" / f"{stem}_pred.png"
        save_image(png, pred_hwc)
        heights = decode_height(np.clip(pred_hwc, 0.0, 1.0), cmap, hmin, hmax)
        npy = out / "reports" / f"{stem}_heights_um.npy"
        np.save(npy, heights.values)
        grid = save_side_by_side(pixels, pred_hwc, out / "figures" / f"{stem}_pair.png")
        written.append((png, npy, grid))
        print(f"{input_path} -> {png}, {npy}")
    _write_manifest(out, cfg, "infer", {"checkpoint": str(args.ckpt), "inputs": len(written)})
    return 0


def _sweep_points(cfg, args):
    if args.sweep == "stacks":
        for k in args.stacks:
            yield (
                f"stacks_{k}",
                replace(
                    cfg,
                    generator=replace(cfg.generator, num_unets=k),
                    train=replace(cfg.train, stages=(k,)),
                ),
            )
    elif args.sweep == "supervision":
        for flag, name in ((True, "with_supervision"), (False, "without_supervision")):
            yield name, replace(cfg, generator=replace(cfg.generator, deep_supervision=flag))
    else:
        for norm in ("l1", "l2"):
            yield f"pixel_{norm}", replace(cfg, weights=replace(cfg.weights, pixel_norm=norm))


def cmd_ablate(args):
    cfg = _load_run_config(args)
    out = _out_tree(cfg.out_dir)
    cmap, hmin, hmax = _colormap(cfg)
    rows = []
    failures = []
    for name, point_cfg in _sweep_points(cfg, args):
        try:
            bank = _prepared_bank(point_cfg)
            ckpt = fit_progressive(
                bank,
                point_cfg.train,
                weights=point_cfg.weights,
                gen_cfg=point_cfg.generator,
                disc_cfg=point_cfg.discriminator,
            )
            ckpt_path = save_full(ckpt, out / "checkpoints" / f"{name}.pt")
            gen, _ = models_from_checkpoint(ckpt)
            if len(gen.unets) != point_cfg.train.stages[-1]:
                raise ConfigError(
                    f"{name}: trained stack has {len(gen.unets)} heads, "
                    f"expected {point_cfg.train.stages[-1]}"
                )
            d_frozen, d_digest = load_eval_discriminator(ckpt_path)
            testset = bank.get("test")
            if testset is None:
                raise DataError("no test split at this corpus size")
            rep = evaluate(gen, testset, d_frozen, cmap=cmap, height_min=hmin, height_max=hmax, d_digest=d_digest)
            rows.append(
                {
                    "variant": name,
                    "ssim": rep.ssim,
                    "lpips": rep.lpips,
                    "mse": rep.mse,
                    "psnr_db": rep.psnr_db,
                    "heads": len(gen.unets),
                }
            )
            _dump_heads(gen, testset, out / "figures" / name, limit=2)
        except FundusHeightError as exc:
            failures.append({"variant": name, "error": f"{type(exc).__name__}: {exc}"})
            print(f"sweep point {name} failed: {exc}", file=sys.stderr)
    if not rows:
        raise TrainingDivergenceError(f"all {args.sweep} sweep points failed: {failures}")

    from .report import TABLE_COLUMNS, plot_metric_bars, write_table

    columns = TABLE_COLUMNS + ("heads",) if args.sweep == "stacks" else TABLE_COLUMNS
    table = out / "reports" / f"ablation_{args.sweep}.csv"
    write_table(rows, table, columns=columns)
    plot_metric_bars(rows, out / "figures")
    if failures:
        with open(out / "reports" / f"ablation_{args.sweep}_failures.json", "w") as fh:
            json.dump(failures, fh, indent=2)
    _write_manifest(out, cfg, f"ablate:{args.sweep}", {"points": len(rows), "failed": len(failures)})
    print(f"ablation {args.sweep}: {len(rows)} variants -> {table}")
    return 0


COMMANDS = {
    "prep": cmd_prep,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "ablate": cmd_ablate,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
